"""Certification by charge readout: tilt planning, outcome classification and protocol simulation.

A plan is an ordered list of tilts together with the charge distribution each
target eigenstate is expected to produce at every tilt. Two targets count as
separated at a tilt when the KL distance between their expected distributions
reaches a threshold (in both directions, so the test is symmetric).
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .fock import half_filling
from .model import Geometry, ModelParams, TiltedHubbard, build_charge_projectors, build_spin_squared
from .opensys import KL_FLOOR, ChargeDistribution, charge_distribution, kl_distance
from .spectral import CHAIN_GRID, LADDER_GRID, SweepTable, grid, low_spectrum, parse_label

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 1.0
CANDIDATE_STEP = 5.0
AMBIGUOUS = "ambiguous"
UNRECOGNIZED = "unrecognized"
SUPPORT_FLOOR = 1e-6
TIE_RTOL = 1e-2

Config = tuple[int, ...]


class PlanningError(RuntimeError):
    """No tilt set on the candidate grid separates every pair of targets."""

    def __init__(self, message, unresolved=(), partial=None):
        super().__init__(message)
        self.unresolved = list(unresolved)
        self.partial = partial


def candidate_tilts(geometry: Geometry, step: float = CANDIDATE_STEP) -> np.ndarray:
    """Default candidate grid: multiples of ``step`` up to the default sweep end."""
    stop = LADDER_GRID[1] if geometry.kind == "ladder" else CHAIN_GRID[1]
    return grid(step, stop, step)


def dominant_distribution(record, configs: Sequence[Config], sector=None, projectors=None,
                          tie_rtol: float = TIE_RTOL, majority: float = 0.5) -> tuple[ChargeDistribution, bool]:
    """Expected outcome distribution of an eigenstate and whether it is definite.

    The state is rounded to its leading configurations: the most probable
    one together with any whose weight is within ``tie_rtol`` of it (mirror
    images on a ladder, resonant pairs of equal classical energy), sharing
    the mass evenly. The state is definite when the leaders hold more than
    ``majority`` of the weight; otherwise it is caught mid-transition and the
    full distribution is returned with ``definite=False``.
    """
    if record.vector is None or projectors is None:
        prof = np.asarray(record.charge_profile, dtype=float)
        mode = tuple(int(x) for x in np.rint(prof))
        if tuple(mode) not in set(configs):
            raise ValueError(f"rounded profile {mode} is not a configuration of the sector")
        return ChargeDistribution.point(configs, mode), True
    dist = charge_distribution(record.vector, projectors)
    lead = dist.probs >= dist.probs.max() * (1 - tie_rtol)
    if dist.probs[lead].sum() <= majority:
        return dist, False
    return ChargeDistribution(list(configs), lead / lead.sum()), True


def separated(p: ChargeDistribution, q: ChargeDistribution, threshold: float) -> bool:
    return min(kl_distance(p, q), kl_distance(q, p)) >= threshold


def expected_from_table(table: SweepTable, targets: Sequence[str], tilts: Sequence[float],
                        with_definite: bool = False):
    """Expected distributions ``{eps: {label: ChargeDistribution}}`` from table eigenstates.

    With ``with_definite`` also returns ``{eps: {label: bool}}`` marking the
    states that have a dominant configuration at that tilt.
    """
    sector = half_filling(table.geometry.sites)
    projectors = build_charge_projectors(sector)
    configs = [p.config for p in projectors]
    out, definite = {}, {}
    for e in tilts:
        j = int(np.argmin(np.abs(table.epsilons - e)))
        if abs(table.epsilons[j] - e) > 1e-9:
            raise ValueError(f"tilt {e} is not on the table grid")
        row, flags = {}, {}
        for lab in targets:
            rec = table.record(j, lab)
            if rec is None:
                raise ValueError(f"state {lab} missing at eps={e}; increase k")
            row[lab], flags[lab] = dominant_distribution(rec, configs, sector, projectors)
        out[float(table.epsilons[j])] = row
        definite[float(table.epsilons[j])] = flags
    return (out, definite) if with_definite else out


def pairs_separated_at(dists: Mapping[str, ChargeDistribution], pairs, threshold: float,
                       definite: Optional[Mapping[str, bool]] = None) -> set:
    """Pairs separated at one tilt; states flagged not ``definite`` separate from nothing."""
    ok = {lab: True if definite is None else definite[lab] for lab in dists}
    return {(a, b) for a, b in pairs if ok[a] and ok[b] and separated(dists[a], dists[b], threshold)}


# -- decision tree ----------------------------------------------------------


@dataclass
class CertificationPlan:
    targets: list[str]
    tilts: list[float]
    expected: dict = field(repr=False)
    threshold: float = DEFAULT_THRESHOLD
    geometry: Optional[dict] = None

    def __post_init__(self):
        missing = [e for e in self.tilts if e not in self.expected]
        if missing:
            raise ValueError(f"no expected distributions at tilts {missing}")

    def support(self, tilt_index: int, label: str, floor: float = SUPPORT_FLOOR) -> set:
        return self.expected[self.tilts[tilt_index]][label].support(floor)

    def expected_outcomes(self, label: str) -> list[Config]:
        """Most probable outcome at every tilt for ``label``."""
        return [self.expected[e][label].mode for e in self.tilts]

    def rules(self) -> list[tuple[tuple, str]]:
        """Outcome-prefix rules, one per leaf of the decision tree."""
        out = []

        def walk(i, cands, prefix):
            if len(cands) == 1:
                out.append((tuple(prefix), cands[0]))
                return
            if i == len(self.tilts):
                out.append((tuple(prefix), AMBIGUOUS))
                return
            outcomes = sorted(set().union(*(self.support(i, c) for c in cands)))
            for o in outcomes:
                walk(i + 1, [c for c in cands if o in self.support(i, c)], prefix + [o])

        walk(0, list(self.targets), [])
        return out

    def to_dict(self) -> dict:
        exp = {}
        for e in self.tilts:
            exp[float(e)] = {
                lab: {",".join(map(str, c)): float(p) for c, p in zip(d.configs, d.probs) if p > 0}
                for lab, d in self.expected[e].items()
            }
        return {
            "geometry": self.geometry,
            "targets": list(self.targets),
            "threshold": float(self.threshold),
            "tilts": [float(e) for e in self.tilts],
            "expected": exp,
            "rules": [{"outcomes": [list(o) for o in pre], "label": lab} for pre, lab in self.rules()],
        }

    @classmethod
    def from_dict(cls, data: dict, configs: Sequence[Config]) -> "CertificationPlan":
        expected = {}
        for e, row in data["expected"].items():
            expected[float(e)] = {}
            for lab, probs in row.items():
                p = np.zeros(len(configs))
                index = {c: i for i, c in enumerate(configs)}
                for key, val in probs.items():
                    p[index[tuple(int(x) for x in key.split(","))]] = val
                expected[float(e)][lab] = ChargeDistribution(list(configs), p)
        return cls(list(data["targets"]), [float(x) for x in data["tilts"]], expected,
                   float(data.get("threshold", DEFAULT_THRESHOLD)), data.get("geometry"))


def plan_tilts(targets: Sequence[str], table: SweepTable, threshold: float = DEFAULT_THRESHOLD,
               candidates: Optional[Sequence[float]] = None,
               expected: Optional[Mapping[float, Mapping[str, ChargeDistribution]]] = None) -> CertificationPlan:
    """Greedy tilt selection separating every pair of ``targets``.

    Each round adds the candidate tilt that separates the largest number of
    still-unresolved pairs, preferring the smaller tilt on ties. Candidates
    default to the multiples of 5 on the table grid. ``expected`` overrides
    the eigenstate-derived distributions (e.g. time-averaged ones for
    non-adiabatic states). Eigenstate-derived rows only separate states that
    are definite at that tilt (see ``dominant_distribution``).

    Raises
    ------
    PlanningError
        When the candidates cannot separate every pair; ``unresolved`` lists
        the remaining pairs and ``partial`` the best plan found.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    targets = list(targets)
    if len(set(targets)) != len(targets):
        raise ValueError("duplicate targets")
    for lab in targets:
        parse_label(lab)
    if candidates is None:
        eps = table.epsilons
        on_grid = eps[np.isclose(np.mod(eps + 1e-9, CANDIDATE_STEP), 0.0, atol=1e-6) & (eps > 0)]
        candidates = on_grid if len(on_grid) else eps
    candidates = sorted(float(e) for e in candidates)
    definite = {}
    if expected is None:
        expected, definite = expected_from_table(table, targets, candidates, with_definite=True)
    pairs = list(itertools.combinations(targets, 2))
    sep = {e: pairs_separated_at(expected[e], pairs, threshold, definite.get(e)) for e in candidates}
    unresolved = set(pairs)
    chosen: list[float] = []
    while unresolved:
        best, gain = None, 0
        for e in candidates:
            g = len(sep[e] & unresolved)
            if g > gain:
                best, gain = e, g
        if best is None:
            break
        chosen.append(best)
        unresolved -= sep[best]
    plan_exp = {e: dict(expected[e]) for e in chosen}
    plan = CertificationPlan(targets, chosen, plan_exp, threshold, table.geometry.spec) if chosen else None
    if unresolved:
        raise PlanningError(
            "unresolved pairs: " + ", ".join(f"{a}/{b}" for a, b in sorted(unresolved)),
            sorted(unresolved), plan,
        )
    return plan


def single_tilt_separators(targets: Sequence[str], table: SweepTable, threshold: float = DEFAULT_THRESHOLD,
                           candidates: Optional[Sequence[float]] = None) -> list[float]:
    """Every tilt on the grid at which all pairs are separated at once."""
    if candidates is None:
        candidates = table.epsilons
    expected, definite = expected_from_table(table, targets, candidates, with_definite=True)
    pairs = list(itertools.combinations(targets, 2))
    return [e for e in expected if len(pairs_separated_at(expected[e], pairs, threshold, definite[e])) == len(pairs)]


def classify_outcome(outcomes: Sequence[Sequence[int]], plan: CertificationPlan) -> str:
    """Label consistent with one measured configuration per tilt.

    Tilts are walked in plan order and the candidate set narrowed to labels
    whose expected support contains the outcome; the walk stops as soon as
    one label remains, so later outcomes may be anything.
    """
    if len(outcomes) != len(plan.tilts):
        raise ValueError(f"expected {len(plan.tilts)} outcomes, got {len(outcomes)}")
    cands = list(plan.targets)
    for i, o in enumerate(outcomes):
        o = tuple(int(x) for x in o)
        if all(o not in plan.support(i, lab) for lab in plan.targets):
            return UNRECOGNIZED
        cands = [c for c in cands if o in plan.support(i, c)]
        if len(cands) == 1:
            return cands[0]
        if not cands:
            return AMBIGUOUS
    return AMBIGUOUS


# -- protocol simulation -----------------------------------------------------


@dataclass
class ConfusionMatrix:
    labels: list[str]
    counts: np.ndarray
    shots: int = 1
    seed: Optional[int] = None

    @property
    def columns(self) -> list[str]:
        return self.labels + [AMBIGUOUS]

    @property
    def trials(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def error_rate(self, label: Optional[str] = None) -> float:
        """Fraction of trials not classified as the true state."""
        rows = range(len(self.labels)) if label is None else [self.labels.index(label)]
        wrong = sum(self.counts[i].sum() - self.counts[i, i] for i in rows)
        return float(wrong / sum(self.counts[i].sum() for i in rows))

    def off_diagonal_rate(self, true: str, guess: str) -> float:
        i, j = self.labels.index(true), self.labels.index(guess)
        return float(self.counts[i, j] / self.counts[i].sum())


def _classify_samples(samples: list[np.ndarray], plan: CertificationPlan, configs, log_q) -> str:
    # support-consistent candidates first, then maximum likelihood among them
    # (or among all targets when noise left no consistent candidate)
    cands = list(plan.targets)
    for i, idx in enumerate(samples):
        seen = {configs[k] for k in np.unique(idx)}
        cands = [c for c in cands if seen <= plan.support(i, c)]
        if len(cands) <= 1:
            break
    if len(cands) == 1:
        return cands[0]
    pool = cands or list(plan.targets)
    ll = np.array([sum(log_q[i][lab][idx].sum() for i, idx in enumerate(samples)) for lab in pool])
    top = np.flatnonzero(ll >= ll.max() - 1e-9)
    return pool[top[0]] if len(top) == 1 else AMBIGUOUS


def sample_confusion(plan: CertificationPlan, true_distributions: Mapping[str, Sequence[ChargeDistribution]],
                     shots: int, trials: int = 100, seed: Optional[int] = None) -> ConfusionMatrix:
    """Monte Carlo confusion matrix from given per-tilt outcome distributions.

    ``true_distributions[label][i]`` is the distribution actually realized
    by ``label`` at tilt ``i``. Every trial draws ``shots`` outcomes per tilt.
    """
    if shots < 1:
        raise ValueError("shots must be at least 1")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = np.random.default_rng(seed)
    labels = list(plan.targets)
    configs = plan.expected[plan.tilts[0]][labels[0]].configs
    log_q = [
        {lab: np.log2(np.maximum(plan.expected[e][lab].probs, KL_FLOOR)) for lab in labels}
        for e in plan.tilts
    ]
    cols = labels + [AMBIGUOUS]
    counts = np.zeros((len(labels), len(cols)), dtype=np.int64)
    for r, lab in enumerate(labels):
        dists = true_distributions[lab]
        if len(dists) != len(plan.tilts):
            raise ValueError(f"{lab}: need one distribution per tilt")
        probs = [d.probs / d.probs.sum() for d in dists]
        for _ in range(trials):
            samples = [rng.choice(len(p), size=shots, p=p) for p in probs]
            guess = _classify_samples(samples, plan, configs, log_q)
            counts[r, cols.index(guess)] += 1
    return ConfusionMatrix(labels, counts, shots, seed)


def protocol_distributions(plan: CertificationPlan, geometry: Geometry, params: ModelParams, rate: float,
                           gamma: float = 0.0, hold: float = 0.0, tol: float = 1e-8,
                           initial: Optional[Mapping[str, np.ndarray]] = None) -> dict[str, list[ChargeDistribution]]:
    """Charge distributions realized at each plan tilt by ramping each target from ``eps = 0``.

    The ramp runs at ``rate`` up to the tilt and holds for ``hold``; with a
    hold the distribution is averaged uniformly over it. ``gamma > 0`` uses
    the dephasing master equation.
    """
    from .dynamics import TiltSchedule, evolve_state
    from .opensys import evolve_lindblad

    sector = half_filling(geometry.sites)
    model = TiltedHubbard(geometry, params, sector)
    projectors = build_charge_projectors(sector)
    if initial is None:
        S2 = build_spin_squared(sector)
        k = max(4 * max(parse_label(l)[1] for l in plan.targets) + 4, 8)
        recs = low_spectrum(model(0.0), S2, min(k, model.dim), sector=sector)
        initial = {}
        for lab in plan.targets:
            hit = [r for r in recs if r.label == lab]
            if not hit:
                raise ValueError(f"state {lab} not found at eps=0")
            initial[lab] = hit[0].vector
    out = {}
    for lab in plan.targets:
        row = []
        for e in plan.tilts:
            sched = TiltSchedule.to_tilt(e, rate, hold)
            times = np.linspace(sched.T_max, sched.duration, 51) if hold > 0 else np.array([sched.T_max])
            if gamma > 0:
                tr = evolve_lindblad(initial[lab], model, sched, gamma, tol=tol, times=times, projectors=projectors)
                ds = tr.distributions
            else:
                tr = evolve_state(initial[lab], model, sched, tol=tol, times=times)
                ds = [charge_distribution(s, projectors) for s in tr.states]
            ds = ds[1:] if len(ds) > 1 else ds
            p = np.mean([d.probs for d in ds], axis=0)
            row.append(ChargeDistribution(ds[0].configs, p))
        out[lab] = row
    return out


def calibrated_plan(plan: CertificationPlan, distributions: Mapping[str, Sequence[ChargeDistribution]]) -> CertificationPlan:
    """Same tilts and targets, with the realized distributions as the expected ones."""
    expected = {e: {lab: distributions[lab][i] for lab in plan.targets} for i, e in enumerate(plan.tilts)}
    return CertificationPlan(list(plan.targets), list(plan.tilts), expected, plan.threshold, plan.geometry)


def simulate_protocol(plan: CertificationPlan, geometry: Geometry, params: ModelParams, rate: float,
                      gamma: float, shots: int, seed: Optional[int] = None, trials: int = 100,
                      hold: float = 0.0, tol: float = 1e-8,
                      distributions: Optional[Mapping[str, Sequence[ChargeDistribution]]] = None,
                      calibrate: bool = True) -> ConfusionMatrix:
    """Simulate the measurement protocol and tally classifications.

    Realized distributions come from closed (``gamma = 0``) or dephasing
    evolution along the ramp family given by ``rate`` and ``hold``, unless
    passed in directly. With ``calibrate`` the classifier's likelihoods are
    the realized distributions (a likelihood-ratio test); otherwise it uses
    the plan's noiseless expectations.
    """
    if distributions is None:
        distributions = protocol_distributions(plan, geometry, params, rate, gamma, hold, tol)
    model = calibrated_plan(plan, distributions) if calibrate else plan
    return sample_confusion(model, distributions, shots, trials, seed)


def error_bound(d: float, shots: int) -> float:
    """Misclassification scale ``2^(-M d)`` for ``M`` shots at distance ``d``."""
    return float(2.0 ** (-shots * d))


def hyperfine_mixing_rate(A: float, gap: float) -> float:
    """Singlet-triplet mixing rate ``A^2 / gap`` induced by a hyperfine coupling ``A``."""
    if gap <= 0:
        raise ValueError("gap must be positive")
    return A * A / gap
