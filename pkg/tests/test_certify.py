import numpy as np
import pytest

from spincert.certify import (
    AMBIGUOUS,
    UNRECOGNIZED,
    CertificationPlan,
    PlanningError,
    classify_outcome,
    dominant_distribution,
    error_bound,
    expected_from_table,
    hyperfine_mixing_rate,
    plan_tilts,
    protocol_distributions,
    sample_confusion,
    simulate_protocol,
    single_tilt_separators,
)
from spincert.fock import half_filling
from spincert.model import Geometry, ModelParams, build_charge_projectors
from spincert.opensys import ChargeDistribution, kl_distance
from spincert.spectral import grid, sweep_spectrum

TARGETS = ["S1", "T1", "S2", "T2"]


@pytest.fixture(scope="module")
def table4():
    return sweep_spectrum(Geometry.chain(4), ModelParams(), grid(0, 70, 0.25), 12, keep_vectors=True)


@pytest.fixture(scope="module")
def plan4(table4):
    return plan_tilts(TARGETS, table4)


def test_four_state_plan(plan4, table4):
    assert len(plan4.tilts) == 2
    assert abs(plan4.tilts[0] - 35) <= 5
    assert 50 <= plan4.tilts[1] <= 60
    assert single_tilt_separators(TARGETS, table4) == []


def test_two_state_plan_needs_one_tilt(table4):
    plan = plan_tilts(["S1", "T1"], table4)
    assert len(plan.tilts) == 1 and 50 <= plan.tilts[0] <= 60


def test_classification_examples(plan4):
    assert classify_outcome([(2, 1, 1, 0), (2, 2, 0, 0)], plan4) == "S1"
    assert classify_outcome([(2, 1, 1, 0), (2, 1, 1, 0)], plan4) == "T1"
    # decided at the first tilt; the second entry is never read
    assert classify_outcome([(2, 2, 0, 0), (0, 0, 0, 0)], plan4) == "S2"
    assert classify_outcome([(0, 0, 2, 2), (2, 2, 0, 0)], plan4) == UNRECOGNIZED
    with pytest.raises(ValueError):
        classify_outcome([(2, 1, 1, 0)], plan4)


def test_noiseless_roundtrip_and_rules(plan4):
    for lab in plan4.targets:
        assert classify_outcome(plan4.expected_outcomes(lab), plan4) == lab
        assert classify_outcome(plan4.expected_outcomes(lab), plan4) == lab
    leaves = dict(plan4.rules())
    assert sorted(leaves.values()) == sorted(TARGETS)
    for prefix, lab in leaves.items():
        padded = list(prefix) + [(0, 0, 0, 0)] * (len(plan4.tilts) - len(prefix))
        assert classify_outcome(padded, plan4) == lab


def test_plan_dict_roundtrip(plan4):
    configs = [p.config for p in build_charge_projectors(half_filling(4))]
    back = CertificationPlan.from_dict(plan4.to_dict(), configs)
    assert back.tilts == plan4.tilts and back.targets == plan4.targets
    for lab in TARGETS:
        assert back.expected_outcomes(lab) == plan4.expected_outcomes(lab)


def test_planner_reports_unresolvable_pairs(table4):
    with pytest.raises(PlanningError) as info:
        plan_tilts(TARGETS, table4, candidates=[5.0, 10.0])
    assert info.value.unresolved
    with pytest.raises(ValueError):
        plan_tilts(TARGETS, table4, threshold=0.0)
    with pytest.raises(ValueError):
        expected_from_table(table4, ["S1"], [35.1])


def test_noiseless_confusion_is_diagonal(plan4):
    dists = {lab: [plan4.expected[e][lab] for e in plan4.tilts] for lab in TARGETS}
    for shots in (1, 10):
        cm = sample_confusion(plan4, dists, shots, trials=20, seed=3)
        assert np.array_equal(cm.counts[:, :4], 20 * np.eye(4, dtype=int))
        assert cm.counts[:, 4].sum() == 0
        assert np.all(cm.trials == 20)


def _overlap_plan(p, q):
    cfg = [(0,), (1,), (2,)]
    a, b = ChargeDistribution(cfg, p), ChargeDistribution(cfg, q)
    return CertificationPlan(["A", "B"], [1.0], {1.0: {"A": a, "B": b}}), {"A": [a], "B": [b]}


def test_single_shot_overlap_is_ambiguous():
    plan, dists = _overlap_plan([0.5, 0.5, 0.0], [0.0, 0.5, 0.5])
    cm = sample_confusion(plan, dists, shots=1, trials=400, seed=11)
    assert cm.counts[:, -1].sum() > 0
    assert cm.off_diagonal_rate("A", "B") == 0.0


def test_more_shots_do_not_hurt():
    plan, dists = _overlap_plan([0.55, 0.45, 0.0], [0.45, 0.55, 0.0])
    rates = []
    for shots in (1, 5, 25, 125):
        errs = [sample_confusion(plan, dists, shots, trials=200, seed=s).error_rate() for s in range(5)]
        rates.append(np.mean(errs))
    # one-sided tolerance of two standard errors at 1000 trials
    for a, b in zip(rates, rates[1:]):
        assert b <= a + 2 * np.sqrt(0.25 / 1000)
    assert rates[-1] < rates[0]


def test_seed_determinism(plan4):
    dists = {lab: [plan4.expected[e][lab] for e in plan4.tilts] for lab in TARGETS}
    a = sample_confusion(plan4, dists, 3, trials=10, seed=42)
    b = sample_confusion(plan4, dists, 3, trials=10, seed=42)
    assert np.array_equal(a.counts, b.counts)


def test_dephased_protocol_respects_error_bound(table4):
    plan = plan_tilts(["S1", "T1"], table4)
    geom, params, rate, gamma, shots = Geometry.chain(4), ModelParams(), 70 / 2e4, 1e-3, 100
    real = protocol_distributions(plan, geom, params, rate, gamma, tol=1e-5)
    # the smaller direction gives the more conservative bound
    d = min(kl_distance(real["S1"][0], real["T1"][0]), kl_distance(real["T1"][0], real["S1"][0]))
    assert d > 0
    cm = simulate_protocol(plan, geom, params, rate, gamma, shots, seed=5, trials=200, distributions=real)
    bound = error_bound(d, shots)
    # binomial tolerance on top of the analytic scale
    tol = bound + 3 * np.sqrt(bound / 200) + 1 / 200
    for a, b in (("S1", "T1"), ("T1", "S1")):
        assert cm.off_diagonal_rate(a, b) <= tol
    # the uncalibrated classifier only knows the noiseless outcomes and does worse
    raw = simulate_protocol(plan, geom, params, rate, gamma, shots, seed=5, trials=200,
                            distributions=real, calibrate=False)
    assert raw.error_rate() >= cm.error_rate()


def test_hyperfine_rate():
    assert hyperfine_mixing_rate(0.4, 100.0) == pytest.approx(0.0016)
    assert hyperfine_mixing_rate(0.0, 5.0) == 0.0
    assert hyperfine_mixing_rate(0.3, 2.0) == pytest.approx(2 * hyperfine_mixing_rate(0.3, 4.0))
    with pytest.raises(ValueError):
        hyperfine_mixing_rate(0.4, 0.0)
    assert error_bound(1.0, 10) == pytest.approx(2.0**-10)


class _Rec:
    def __init__(self, vector):
        self.vector = vector
        self.charge_profile = None


def test_dominant_distribution_rounding():
    sec = half_filling(4)
    projs = build_charge_projectors(sec)
    configs = [p.config for p in projs]
    first = {p.config: p.indices[0] for p in projs}

    def state(weights):
        v = np.zeros(sec.dim)
        for cfg, w in weights.items():
            v[first[cfg]] = np.sqrt(w)
        return _Rec(v / np.linalg.norm(v))

    d, ok = dominant_distribution(state({(2, 0, 1, 1): 0.7, (1, 1, 1, 1): 0.3}), configs, sec, projs)
    assert ok and d.prob((2, 0, 1, 1)) == 1.0
    # tied leaders (mirror images, resonant pairs) share the mass
    d, ok = dominant_distribution(state({(2, 0, 1, 1): 0.35, (1, 1, 0, 2): 0.3499, (1, 1, 1, 1): 0.3}),
                                  configs, sec, projs)
    assert ok and d.prob((2, 0, 1, 1)) == 0.5 and d.prob((1, 1, 0, 2)) == 0.5
    # a state caught between two configurations is not definite
    d, ok = dominant_distribution(state({(2, 0, 1, 1): 0.45, (1, 1, 0, 2): 0.3, (1, 1, 1, 1): 0.25}),
                                  configs, sec, projs)
    assert not ok and d.prob((1, 1, 1, 1)) == pytest.approx(0.25)
