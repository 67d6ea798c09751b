"""Acceptance criteria 1-10.

Each test prints one ``CRITERION n: PASS|FAIL`` line (also collected in the
terminal summary) and then asserts the criterion with the pinned tolerances.
The whole module takes about fifteen minutes on one core; the N=10 sweep of
criterion 1 dominates.
"""

import itertools

import numpy as np
import pytest
import scipy.sparse as sp

import jw
from spincert.certify import PlanningError, expected_from_table, plan_tilts, separated, single_tilt_separators
from spincert.dynamics import TiltSchedule, evolve_state, sample_times, time_averaged_charge
from spincert.fock import enumerate_sector, half_filling
from spincert.model import (
    Geometry,
    ModelParams,
    TiltedHubbard,
    build_charge_projectors,
    build_hamiltonian,
    build_spin_squared,
)
from spincert.opensys import charge_distribution, evolve_lindblad, kl_distance, trace_distance
from spincert.spectral import detect_anticrossings, grid, low_spectrum, lowest_eigenpairs, min_gap, sweep_spectrum

pytestmark = pytest.mark.slow

PARAMS = ModelParams(t=1.0, U=40.0, V=10.0)
TARGETS = ["S1", "T1", "S2", "T2"]


@pytest.fixture(scope="module")
def fine_tables():
    """Low spectra of N=4..10 chains on a 0.1 grid over [0, 70]."""
    cache = {}

    def get(n):
        if n not in cache:
            cache[n] = sweep_spectrum(Geometry.chain(n), PARAMS, grid(0, 70, 0.1), k=8)
        return cache[n]

    return get


@pytest.fixture(scope="module")
def anticrossings4(fine_tables):
    tab = fine_tables(4)
    return {s: detect_anticrossings(tab, s) for s in (0.0, 1.0)}


# -- 1 ---------------------------------------------------------------------

TABLE_GAPS = {4: (0.2231, 0.0913), 6: (0.1255, 0.0757), 8: (0.1011, 0.0684), 10: (0.0710, 0.0575)}


def test_criterion_1_minimum_gaps(fine_tables, report):
    rows, ok = [], True
    for n, (s_ref, t_ref) in TABLE_GAPS.items():
        tab = fine_tables(n)
        s = min_gap(tab, 0.0, refine=False)[1]
        t = min_gap(tab, 1.0, refine=False)[1]
        good = abs(s - s_ref) <= 2e-3 and abs(t - t_ref) <= 2e-3
        ok &= good
        rows.append(f"N={n} S {s:.4f}/{s_ref} T {t:.4f}/{t_ref}{'' if good else ' x'}")
    report(1, ok, "; ".join(rows))
    assert ok


# -- 2 ---------------------------------------------------------------------

def test_criterion_2_anticrossing_location(anticrossings4, report):
    locs = {}
    for s, found in anticrossings4.items():
        locs[s] = min(found, key=lambda x: x[1])[0] if found else np.nan
    ok = all(abs(v - 13.4) <= 0.2 for v in locs.values())
    report(2, ok, f"singlet at {locs[0.0]:.3f}, triplet at {locs[1.0]:.3f} (13.4 +- 0.2)")
    assert ok


# -- 3 ---------------------------------------------------------------------

def test_criterion_3_charge_profiles(chain4, report):
    want = {
        35.0: {"S2": (2, 2, 0, 0), "T2": (2, 1, 0, 1), "S1": (2, 1, 1, 0), "T1": (2, 1, 1, 0)},
        70.0: {"S1": (2, 2, 0, 0), "T1": (2, 1, 1, 0), "S2": (2, 1, 1, 0)},
    }
    worst = 0.0
    for eps, states in want.items():
        spec = chain4.spectrum(eps)
        for lab, cfg in states.items():
            worst = max(worst, np.abs(spec[lab].charge_profile - np.array(cfg)).max())
    ok = worst <= 0.05
    report(3, ok, f"largest per-site deviation {worst:.2e} (<= 0.05)")
    assert ok


# -- 4 ---------------------------------------------------------------------

def test_criterion_4_adiabatic_fidelity(chain4, anticrossings4, report):
    sched = TiltSchedule(2e4, 70.0)
    centers = sorted({round(e, 2) for f in anticrossings4.values() for e, _ in f})
    times = sample_times(sched, n=500, refine_eps=centers, refine_width=1.0, refine_n=100)
    psi = chain4.spectrum(0.0)
    res = {}
    for lab in ("S1", "T1", "S2"):
        tr = evolve_state(psi[lab].vector.astype(complex), chain4.model, sched, tol=1e-8, times=times,
                          track=lab, keep_states=False)
        res[lab] = (tr.fidelity.min(), tr.fidelity[-1], tr.epsilons[np.argmin(tr.fidelity)])
    checks = {"S1": res["S1"][0] >= 0.98, "T1": res["T1"][0] >= 0.97, "S2": abs(res["S2"][0] - 0.2) <= 0.15}
    detail = ", ".join(f"{k} min {v[0]:.4f} at eps {v[2]:.2f} final {v[1]:.4f}" for k, v in res.items())
    ok = all(checks.values())
    report(4, ok, detail + " (S1>=0.98, T1>=0.97, S2 0.2+-0.15)")
    assert ok


# -- 5 ---------------------------------------------------------------------

def test_criterion_5_time_averaged_charges(chain4, report):
    sched = TiltSchedule(1e4, 35.0, hold=1e3)
    times = np.concatenate([np.linspace(0, 1e4, 200), np.linspace(1e4, 1.1e4, 1001)[1:]])
    want = {"S2": (1.5, 1.0, 1.5, 0.0), "T2": (1.2, 1.6, 1.0, 0.2)}
    psi = chain4.spectrum(0.0)
    got, ok = {}, True
    for lab, ref in want.items():
        tr = evolve_state(psi[lab].vector.astype(complex), chain4.model, sched, tol=1e-8, times=times,
                          keep_states=False)
        got[lab] = time_averaged_charge(tr, (1e4, 1.1e4))
        ok &= bool(np.all(np.abs(got[lab] - np.array(ref)) <= 0.15))
    report(5, ok, ", ".join(f"{k} {np.round(v, 3).tolist()}" for k, v in got.items()) + " (+-0.15)")
    assert ok


# -- 6, 7 ------------------------------------------------------------------

GAMMAS = np.logspace(-2, -4, 5)


@pytest.fixture(scope="module")
def dephasing_runs(chain4):
    sched = TiltSchedule(2e4, 70.0)
    psi = chain4.spectrum(0.0)
    out = {}
    for g in GAMMAS:
        for lab in ("S1", "T1"):
            out[g, lab] = evolve_lindblad(psi[lab].vector, chain4.model, sched, g, tol=1e-5, keep_states=False)
    return out


def test_criterion_6_decoherence_distance(dephasing_runs, report):
    d = np.array([kl_distance(dephasing_runs[g, "S1"].distributions[-1], dephasing_runs[g, "T1"].distributions[-1])
                  for g in GAMMAS])
    # GAMMAS descends, so d must not decrease along it reversed
    monotone = bool(np.all(np.diff(d[::-1]) <= 1e-9))
    strong = d[0] > 10
    detail = ", ".join(f"g={g:.1e}: {x:.3f}" for g, x in zip(GAMMAS, d))
    report(6, monotone and strong, f"d(S1,T1) {detail} (d>10 at 0.01: {strong}; monotone: {monotone})")
    assert monotone and strong


def test_criterion_7_entropy(dephasing_runs, anticrossings4, report):
    windows = {"S1": [e for e, _ in anticrossings4[0.0]], "T1": [e for e, _ in anticrossings4[1.0]]}
    mono, located, notes = True, True, []
    for (g, lab), tr in dephasing_runs.items():
        dS = np.diff(tr.entropies)
        mono &= bool(dS.min() >= -1e-6)
        j = int(np.argmax(dS))
        at = 0.5 * (tr.epsilons[j] + tr.epsilons[j + 1])
        inside = any(abs(at - c) <= 1.0 for c in windows[lab])
        located &= inside
        if not inside:
            notes.append(f"{lab} g={g:.1e} peak at eps {at:.2f}")
    detail = f"non-decreasing: {mono}; peaks in anti-crossing windows: {located}"
    report(7, mono and located, detail + ("; " + ", ".join(notes) if notes else ""))
    assert mono and located


# -- 8 ---------------------------------------------------------------------

@pytest.mark.parametrize("n", [4, 6, 8])
def test_criterion_8_two_tilt_plans(n, report):
    tab = sweep_spectrum(Geometry.chain(n), PARAMS, grid(0, 70, 0.25), k=12, keep_vectors=True)
    plan = plan_tilts(TARGETS, tab)
    tilts = sorted(plan.tilts)
    single = single_tilt_separators(TARGETS, tab)
    ok = (len(tilts) == 2 and 30 <= tilts[0] <= 40 and 50 <= tilts[1] <= 75 and not single)
    report(8, ok, f"N={n} tilts {tilts}, single-tilt separators {single}")
    assert ok


# -- 9 ---------------------------------------------------------------------

def test_criterion_9_ladder_and_ring(report):
    tab = sweep_spectrum(Geometry.ladder(4), PARAMS, grid(0, 100, 0.5), k=10, keep_vectors=True)
    high = [e for e in tab.epsilons if e > 80]
    exp, definite = expected_from_table(tab, TARGETS, high, with_definite=True)
    s1_alone = all(definite[e]["S1"] and separated(exp[e]["S1"], exp[e][o], 1.0) for e in high for o in TARGETS[1:])
    with pytest.raises(PlanningError) as info:
        plan_tilts(TARGETS, tab)
    unresolved = info.value.unresolved
    excited_only = bool(unresolved) and all("S1" not in p for p in unresolved)

    sec = half_filling(4)
    ring = TiltedHubbard(Geometry.ladder(2), PARAMS, sec)
    S2 = build_spin_squared(sec)
    projs = build_charge_projectors(sec)
    overlap, dist = 0.0, 0.0
    for eps in (2000.0, 5000.0):
        r = {x.label: x for x in low_spectrum(ring(eps), S2, 12, sector=sec)}
        a = charge_distribution(r["T1"].vector, projs)
        b = charge_distribution(r["S2"].vector, projs)
        overlap = max(overlap, abs(np.vdot(r["T1"].vector, r["S2"].vector)))
        dist = max(dist, 0.5 * np.abs(a.probs - b.probs).sum())
    ring_ok = overlap < 1e-10 and dist < 1e-6
    ok = s1_alone and excited_only and ring_ok
    report(9, ok, f"ladder S1 separated above 80: {s1_alone}; unresolved {unresolved}; "
                  f"ring overlap {overlap:.1e}, distance {dist:.1e}")
    assert ok


# -- 10 --------------------------------------------------------------------

def _embed(geometry, eps, sites):
    """Package Hamiltonian assembled sector by sector on the full Fock space."""
    dim = 4**sites
    H = np.zeros((dim, dim))
    for nu, nd in itertools.product(range(sites + 1), repeat=2):
        sec = enumerate_sector(sites, nu, nd)
        idx = [jw.full_index(int(u), int(d), sites) for u, d in zip(sec.up, sec.down)]
        H[np.ix_(idx, idx)] = build_hamiltonian(geometry, PARAMS, eps, sec).toarray()
    return H


def test_criterion_10_properties(chain4, report):
    fails = []
    up, dn = jw.operators(4)
    num = sum(u.T @ u + d.T @ d for u, d in zip(up, dn))
    sz = sum(0.5 * (u.T @ u - d.T @ d) for u, d in zip(up, dn))
    s2 = jw.spin_squared(4)
    for geo in (Geometry.chain(4), Geometry.ladder(2)):
        for eps in (0.0, 13.4, 70.0):
            H = _embed(geo, eps, 4)
            for name, op in (("S2", s2), ("Sz", sz), ("N", num)):
                c = np.linalg.norm(H @ op - op @ H)
                if c >= 1e-10:
                    fails.append(f"[H,{name}]={c:.1e}")

    for n in (4, 6):
        H = build_hamiltonian(Geometry.chain(n), PARAMS, 20.0, half_filling(n))
        w_it, v_it = lowest_eigenpairs(H, 6, tol=1e-10, dense_limit=0)
        w, v = np.linalg.eigh(H.toarray())
        if np.abs(w_it - w[:6]).max() > 1e-8:
            fails.append(f"N={n} eigenvalues")
        if np.linalg.norm(H @ v_it - v_it * w_it, axis=0).max() > 1e-8:
            fails.append(f"N={n} residuals")

    sched = TiltSchedule(200.0, 30.0, hold=20.0)
    psi0 = chain4.spectrum(0.0)["T2"].vector.astype(complex)
    times = np.linspace(0, sched.duration, 11)
    tr = evolve_state(psi0, chain4.model, sched, tol=1e-10, times=times, reduce=False)
    if np.abs(tr.norms - 1).max() > 1e-8:
        fails.append("Schroedinger norm")
    lb = evolve_lindblad(psi0, chain4.model, sched, 0.05, tol=1e-9, times=times, reduce=False)
    if np.abs(lb.traces - 1).max() > 1e-8:
        fails.append("Lindblad trace")
    l0 = evolve_lindblad(psi0, chain4.model, sched, 0.0, tol=1e-10, times=times, keep_states=True, reduce=False)
    td = max(trace_distance(r, np.outer(s, s.conj())) for r, s in zip(l0.rhos, tr.states))
    if td > 1e-6:
        fails.append(f"gamma=0 trace distance {td:.1e}")

    for n in (4, 6):
        sec = half_filling(n)
        total = sum(p.matrix() for p in build_charge_projectors(sec))
        if (total != sp.identity(sec.dim)).nnz:
            fails.append(f"N={n} projector completeness")

    ok = not fails
    report(10, ok, "all property checks hold" if ok else "; ".join(fails))
    assert ok
