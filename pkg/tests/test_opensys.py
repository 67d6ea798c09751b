import numpy as np
import pytest
from scipy.integrate import solve_ivp

from spincert.dynamics import TiltSchedule, evolve_state
from spincert.fock import half_filling
from spincert.model import Geometry, ModelParams, TiltedHubbard, build_charge_projectors
from spincert.opensys import (
    KL_FLOOR,
    ChargeDistribution,
    PositivityError,
    charge_distribution,
    check_density,
    dephasing_mask,
    evolve_lindblad,
    kl_distance,
    lindblad_rhs,
    pure_density,
    purity,
    sample_complexity,
    trace_distance,
    von_neumann_entropy,
)


def _random_density(rng, n, rank=None):
    a = rng.normal(size=(n, rank or n)) + 1j * rng.normal(size=(n, rank or n))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def _explicit_dissipator(rho, projectors, gamma):
    """gamma * sum_n (L rho L - 1/2 {L, rho}) with explicit projector matrices."""
    out = np.zeros_like(rho)
    for p in projectors:
        L = p.matrix().toarray()
        out += L @ rho @ L - 0.5 * (L @ rho + rho @ L)
    return gamma * out


def test_masked_dissipator_equals_projector_sum(chain4, rng):
    ps = build_charge_projectors(chain4.sector)
    rho = _random_density(rng, 36)
    mask = dephasing_mask(ps, 36)
    H = chain4.model.dense(3.0)
    expect = -1j * (H @ rho - rho @ H) + _explicit_dissipator(rho, ps, 0.3)
    np.testing.assert_allclose(lindblad_rhs(rho, H, 0.3, mask), expect, atol=1e-12)


def test_ramp_matches_reference_ode_solver(chain4):
    """Dual route: split-step integrator vs Runge-Kutta on the explicit master equation."""
    gamma = 0.05
    sched = TiltSchedule(20.0, 16.0, hold=4.0)
    ps = build_charge_projectors(chain4.sector)
    rho0 = pure_density(chain4.spectrum(0.0)["S1"].vector)
    times = np.array([0.0, 10.0, 24.0])
    tr = evolve_lindblad(rho0, chain4.model, sched, gamma, tol=1e-10, times=times, projectors=ps, reduce=False)
    H0 = chain4.model.h0.toarray()
    D = np.diag(chain4.model.tilt_diag)

    def rhs(t, y):
        rho = y.reshape(36, 36)
        H = H0 + sched.epsilon(t) * D
        return (-1j * (H @ rho - rho @ H) + _explicit_dissipator(rho, ps, gamma)).ravel()

    ref = solve_ivp(rhs, (0, 24.0), rho0.ravel(), method="DOP853", t_eval=times, rtol=1e-10, atol=1e-12)
    for k in range(len(times)):
        assert np.abs(tr.rhos[k] - ref.y[:, k].reshape(36, 36)).max() < 1e-6


def test_zero_gamma_is_unitary(chain4):
    psi0 = chain4.spectrum(0.0)["T1"].vector
    sched = TiltSchedule(300.0, 30.0)
    t = np.linspace(0, 300, 4)
    a = evolve_state(psi0, chain4.model, sched, tol=1e-9, times=t)
    b = evolve_lindblad(psi0, chain4.model, sched, 0.0, tol=1e-9, times=t)
    for x, rho in zip(a.states, b.rhos):
        assert trace_distance(pure_density(x), rho) < 1e-6


def test_pure_dephasing_closed_form(rng):
    """With H = 0 charge coherences decay as exp(-gamma t); block-diagonal parts stay put."""
    geom, sec = Geometry.chain(2), half_filling(2)
    m = TiltedHubbard(geom, ModelParams(t=0.0, U=0.0, V=0.0), sec)
    ps = build_charge_projectors(sec)
    mask = dephasing_mask(ps, sec.dim)
    rho0 = _random_density(rng, sec.dim)
    gamma = 0.2
    tr = evolve_lindblad(rho0, m, TiltSchedule(10.0, 0.0), gamma, tol=1e-10,
                         times=np.linspace(0, 10, 6), reduce=False)
    for t, rho in zip(tr.times, tr.rhos):
        np.testing.assert_allclose(rho, rho0 * np.exp(-gamma * t * mask), atol=1e-9)
    assert np.all(np.diff(tr.purities) <= 1e-12)
    # charge-diagonal states are fixed points
    fixed = rho0 * (1 - mask)
    fixed /= np.trace(fixed).real
    tr = evolve_lindblad(fixed, m, TiltSchedule(10.0, 0.0), gamma, times=np.array([0.0, 10.0]), reduce=False)
    np.testing.assert_allclose(tr.rhos[-1], fixed, atol=1e-10)


def test_trace_hermiticity_positivity(chain4):
    rho0 = pure_density(chain4.spectrum(0.0)["S1"].vector)
    tr = evolve_lindblad(rho0, chain4.model, TiltSchedule(400.0, 20.0), 0.02, tol=1e-8,
                         times=np.linspace(0, 400, 9))
    assert np.abs(tr.traces - 1).max() < 1e-8
    assert tr.hermiticity.max() < 1e-10
    assert tr.min_eigenvalues.min() > -1e-8
    assert np.all(np.diff(tr.entropies) >= -1e-6)
    for d in tr.distributions:
        assert d.probs.min() >= 0 and abs(d.probs.sum() - 1) < 1e-8


def test_invalid_inputs(chain4):
    rho = pure_density(chain4.spectrum(0.0)["S1"].vector)
    with pytest.raises(ValueError):
        evolve_lindblad(rho, chain4.model, TiltSchedule(1.0, 1.0), -0.1)
    with pytest.raises(ValueError):
        evolve_lindblad(2 * rho, chain4.model, TiltSchedule(1.0, 1.0), 0.1)
    with pytest.raises(ValueError):
        evolve_lindblad(np.eye(3) / 3, chain4.model, TiltSchedule(1.0, 1.0), 0.1)


def test_check_density_clips_and_raises():
    rho = np.diag([0.6, 0.4 + 1e-9, -1e-9]).astype(complex)
    fixed = check_density(rho)
    assert np.linalg.eigvalsh(fixed).min() >= 0 and np.trace(fixed).real == pytest.approx(1)
    with pytest.raises(PositivityError) as info:
        check_density(np.diag([1.1, -0.1]), time=3.5)
    assert info.value.time == 3.5


def test_charge_distribution_examples(chain4):
    sec = chain4.sector
    ps = build_charge_projectors(sec)
    v = np.zeros(sec.dim)
    v[0] = 1
    d = charge_distribution(v, ps)
    assert d.probs.max() == 1 and d.mode == tuple(sec.occupations[0])
    i = next(k for k in range(sec.dim) if tuple(sec.occupations[k]) != d.mode)
    w = np.zeros(sec.dim)
    w[0] = w[i] = 1 / np.sqrt(2)
    d2 = charge_distribution(pure_density(w), ps)
    assert sorted(d2.probs[d2.probs > 0]) == pytest.approx([0.5, 0.5])
    assert d2.support() == {tuple(sec.occupations[0]), tuple(sec.occupations[i])}


def test_distribution_normalized_for_random_states(chain4, rng):
    ps = build_charge_projectors(chain4.sector)
    for _ in range(5):
        d = charge_distribution(_random_density(rng, 36, rank=3), ps)
        assert d.probs.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(d.mean_profile().sum(), 4)


def test_kl_distance_properties():
    cfg = [(0,), (1,), (2,)]
    p = ChargeDistribution(cfg, [0.5, 0.5, 0.0])
    q = ChargeDistribution(cfg, [0.25, 0.25, 0.5])
    assert kl_distance(p, p) == 0.0
    assert kl_distance(p, q) == pytest.approx(1.0)
    r = ChargeDistribution(cfg, [0.0, 0.0, 1.0])
    assert kl_distance(p, r) == pytest.approx(np.log2(0.5 / KL_FLOOR))
    with pytest.raises(ValueError):
        kl_distance(p, ChargeDistribution([(0,), (1,)], [0.5, 0.5]))


def test_sample_complexity():
    assert sample_complexity(1.0, 2.0**-10) == 10
    assert sample_complexity(10.0, 2.0**-10) == 1
    assert sample_complexity(1.2, 2.0**-100) <= 1000
    for bad in (0.0, -1.0):
        with pytest.raises(ValueError):
            sample_complexity(bad, 0.1)
    with pytest.raises(ValueError):
        sample_complexity(1.0, 1.0)


def test_entropy_examples(rng):
    psi = rng.normal(size=8) + 0j
    psi /= np.linalg.norm(psi)
    assert von_neumann_entropy(pure_density(psi)) == pytest.approx(0.0, abs=1e-10)
    assert von_neumann_entropy(np.eye(8) / 8) == pytest.approx(3.0)
    assert purity(np.eye(4) / 4) == pytest.approx(0.25)


def test_partial_charge_transition_under_weak_dephasing(chain4):
    rho0 = pure_density(chain4.spectrum(0.0)["S1"].vector)
    tr = evolve_lindblad(rho0, chain4.model, TiltSchedule(2e4, 70.0), 1e-3, tol=1e-5,
                         times=np.array([0.0, 2e4]), keep_states=False)
    n = tr.profiles[-1]
    # the electron moving from site 3 to site 2 is only partly transferred
    assert 0.05 < n[1] - 1 < 0.95
    assert 0.05 < 1 - n[2] < 0.95
    assert n[0] > n[1] > n[2] > n[3]
