"""Charge dephasing: Lindblad evolution, charge statistics and distinguishability.

With Lindblad operators ``L_n`` that are projectors onto charge
configurations (``sum_n L_n = 1``, ``L_n^2 = L_n``), the dissipator reduces to

    gamma * (sum_n L_n rho L_n - rho),

which in the occupation basis damps every coherence between basis states of
different charge configuration at rate ``gamma`` and leaves the rest alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil, log2
from typing import Optional, Sequence

import numpy as np

from .dynamics import (
    IntegrationError,
    InstantaneousTracker,
    TiltSchedule,
    _breakpoints,
    _Propagator,
    propagate,
    sample_times,
    spin_subspace,
)
from .model import ChargeProjector, TiltedHubbard, build_charge_projectors, build_spin_squared

KL_FLOOR = 1e-12
POSITIVITY_TOL = 1e-8

# fourth-order symmetric composition of a second-order symmetric step
_W1 = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
_W0 = 1.0 - 2.0 * _W1


class PositivityError(IntegrationError):
    pass


@dataclass
class ChargeDistribution:
    configs: list[tuple[int, ...]]
    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if len(self.configs) != len(self.probs):
            raise ValueError("configs and probabilities differ in length")

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return dict(zip(self.configs, self.probs.tolist()))

    def prob(self, config) -> float:
        return self.as_dict().get(tuple(config), 0.0)

    @property
    def mode(self) -> tuple[int, ...]:
        return self.configs[int(np.argmax(self.probs))]

    def support(self, floor: float = 1e-6) -> set[tuple[int, ...]]:
        return {c for c, p in zip(self.configs, self.probs) if p > floor}

    def mean_profile(self) -> np.ndarray:
        return self.probs @ np.array(self.configs, dtype=float)

    @classmethod
    def point(cls, configs, config) -> "ChargeDistribution":
        p = np.zeros(len(configs))
        p[list(configs).index(tuple(config))] = 1.0
        return cls(list(configs), p)


def charge_distribution(state, projectors: Sequence[ChargeProjector]) -> ChargeDistribution:
    """Outcome probabilities ``p_n = Tr(rho L_n)`` for a density matrix or a pure state."""
    state = np.asarray(state)
    if state.ndim == 1:
        diag = np.abs(state) ** 2
    else:
        diag = np.real(np.diagonal(state))
    probs = np.array([diag[p.indices].sum() for p in projectors])
    total = probs.sum()
    if total > 0:
        probs = probs / total
    return ChargeDistribution([p.config for p in projectors], np.clip(probs, 0.0, None))


def kl_distance(p: ChargeDistribution, q: ChargeDistribution, floor: float = KL_FLOOR) -> float:
    """Relative entropy ``sum_n p_n log2(p_n / q_n)`` in bits.

    ``q_n`` is clamped from below at ``floor`` so that disjoint supports give
    a large finite value instead of infinity.
    """
    if list(p.configs) != list(q.configs):
        raise ValueError("distributions are over different configuration sets")
    pp = p.probs
    qq = np.maximum(q.probs, floor)
    m = pp > 0
    return float(max(np.sum(pp[m] * np.log2(pp[m] / qq[m])), 0.0))


def sample_complexity(d: float, target_error: float) -> int:
    """Smallest ``M`` with ``2^(-M d) <= target_error``."""
    if d <= 0:
        raise ValueError("distance must be positive for a finite sample count")
    if not 0 < target_error < 1:
        raise ValueError("target error must lie in (0, 1)")
    m = ceil(-log2(target_error) / d - 1e-12)
    return max(int(m), 1)


def von_neumann_entropy(rho: np.ndarray) -> float:
    """``-Tr(rho log2 rho)`` in bits, with ``0 log 0 = 0``."""
    rho = np.asarray(rho)
    if rho.ndim == 1:
        return 0.0
    lam = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    lam = lam[lam > 1e-15]
    return float(max(-np.sum(lam * np.log2(lam)), 0.0))


def purity(rho: np.ndarray) -> float:
    return float(np.real(np.vdot(rho, rho)))


def pure_density(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def dephasing_mask(projectors: Sequence[ChargeProjector], dim: int) -> np.ndarray:
    """1 where two basis states differ in charge configuration, else 0."""
    lab = np.empty(dim, dtype=np.int64)
    for j, p in enumerate(projectors):
        lab[p.indices] = j
    return (lab[:, None] != lab[None, :]).astype(float)


def lindblad_rhs(rho, H, gamma, mask):
    """``-i[H, rho] + gamma (sum_n L_n rho L_n - rho)`` for diagonal projectors."""
    return -1j * (H @ rho - rho @ H) - gamma * mask * rho


def check_density(rho, time=None, tol: float = POSITIVITY_TOL):
    """Clip small negative eigenvalues; raise on larger ones."""
    lam, v = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    if lam.min() < -tol:
        raise PositivityError(f"density matrix eigenvalue {lam.min():.3e} below -{tol:g}", time=time)
    if lam.min() < 0:
        lam = np.clip(lam, 0.0, None)
        rho = (v * lam) @ v.conj().T
        rho /= np.trace(rho).real
    return rho


@dataclass
class DensityTrajectory:
    times: np.ndarray
    epsilons: np.ndarray
    rhos: Optional[list[np.ndarray]]
    traces: np.ndarray
    purities: np.ndarray
    entropies: np.ndarray
    profiles: np.ndarray
    distributions: list[ChargeDistribution] = field(repr=False)
    hermiticity: np.ndarray = None
    min_eigenvalues: np.ndarray = None
    fidelity: Optional[np.ndarray] = None
    tracked: Optional[str] = None
    gamma: float = 0.0
    steps: int = 0

    @property
    def final(self) -> np.ndarray:
        return self.rhos[-1]


class _LindbladStepper:
    """Fourth-order step for the dephasing master equation.

    The symmetric core ``e^{hD/2} e^{hL_H} e^{hD/2}`` uses the exact
    dissipative factor and the Magnus unitary; three cores are combined
    with the triple-jump weights. Reduced coordinates are used when a
    ``basis`` of an invariant subspace is given.
    """

    def __init__(self, model: TiltedHubbard, schedule: TiltSchedule, gamma: float, mask,
                 basis: Optional[np.ndarray] = None):
        self.prop = _Propagator(model, schedule, basis=basis)
        if not self.prop.dense:
            raise ValueError("density-matrix evolution needs a dense-size sector")
        self.basis = basis
        self.gamma = gamma
        self.mask = mask

    def reduce(self, rho):
        Q = self.basis
        return rho if Q is None else Q.T @ rho @ Q

    def lift(self, rho):
        Q = self.basis
        return rho if Q is None else Q @ rho @ Q.T

    def damp(self, h, rho):
        if not self.gamma or h == 0:
            return rho
        factor = np.exp(-h * self.gamma * self.mask)
        if self.basis is None:
            return factor * rho
        return self.reduce(factor * self.lift(rho))

    def _unitary(self, t, h, rho, ramp):
        U = self.prop.unitary(t, h, ramp)
        return U @ rho @ U.conj().T

    def step(self, t, h, rho):
        ramp = self.prop.on_ramp(t, h)
        if not self.gamma:
            return self._unitary(t, h, rho, ramp)
        a, b = _W1 * h, _W0 * h
        # adjacent half-step dampings merged
        rho = self.damp(0.5 * a, rho)
        rho = self._unitary(t, a, rho, ramp)
        rho = self.damp(0.5 * (a + b), rho)
        rho = self._unitary(t + a, b, rho, ramp)
        rho = self.damp(0.5 * (a + b), rho)
        rho = self._unitary(t + a + b, a, rho, ramp)
        return self.damp(0.5 * a, rho)


def evolve_lindblad(rho0: np.ndarray, model: TiltedHubbard, schedule: TiltSchedule, gamma: float,
                    tol: float = 1e-8, max_step: float = 50.0, times: Optional[np.ndarray] = None,
                    projectors: Optional[Sequence[ChargeProjector]] = None, track: Optional[str] = None,
                    keep_states: bool = True, reduce: bool = True) -> DensityTrajectory:
    """Integrate the dephasing master equation from ``rho0`` at ``tau = 0``.

    Each step composes exact exponentials of the unitary (fourth-order
    Magnus) and dissipative parts; with ``gamma = 0`` it reduces to the
    closed-system propagator. ``tol`` bounds the estimated local error per
    step in Frobenius norm.
    """
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.ndim == 1:
        rho0 = pure_density(rho0)
    if rho0.shape != (model.dim, model.dim):
        raise ValueError("initial density matrix has the wrong dimension")
    if abs(np.trace(rho0).real - 1.0) > 1e-8:
        raise ValueError("initial density matrix must have unit trace")
    if projectors is None:
        projectors = build_charge_projectors(model.sector)
    mask = dephasing_mask(projectors, model.dim)
    basis = spin_subspace(build_spin_squared(model.sector), rho0) if reduce else None
    stepper = _LindbladStepper(model, schedule, gamma, mask, basis)
    if times is None:
        times = sample_times(schedule)
    times = np.asarray(times, dtype=float)
    if times[0] != 0.0:
        times = np.concatenate([[0.0], times])
    tracker = InstantaneousTracker(model, track) if track else None
    fid = []
    checked = []

    def on_sample(t, rho):
        rho_c = check_density(stepper.lift(rho), time=t)
        checked.append(rho_c)
        if tracker is not None:
            phi = tracker(schedule.epsilon(t))
            fid.append(float(np.real(np.vdot(phi, rho_c @ phi))))

    on_sample(0.0, stepper.reduce(rho0))
    _, n_steps = propagate(stepper.step, stepper.reduce(rho0), times[1:], tol, max_step,
                           breaks=_breakpoints(schedule, times[-1]), on_sample=on_sample)
    rhos = checked
    occ = model.sector.occupations
    diag = np.array([np.real(np.diagonal(r)) for r in rhos])
    return DensityTrajectory(
        times=times,
        epsilons=schedule.epsilon(times),
        rhos=rhos if keep_states else None,
        traces=np.array([np.trace(r).real for r in rhos]),
        purities=np.array([purity(r) for r in rhos]),
        entropies=np.array([von_neumann_entropy(r) for r in rhos]),
        profiles=diag @ occ,
        distributions=[charge_distribution(r, projectors) for r in rhos],
        hermiticity=np.array([np.abs(r - r.conj().T).max() for r in rhos]),
        min_eigenvalues=np.array([np.linalg.eigvalsh(0.5 * (r + r.conj().T)).min() for r in rhos]),
        fidelity=np.array(fid) if tracker else None,
        tracked=track,
        gamma=gamma,
        steps=n_steps,
    )


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    lam = np.linalg.eigvalsh(0.5 * ((a - b) + (a - b).conj().T))
    return 0.5 * float(np.abs(lam).sum())
