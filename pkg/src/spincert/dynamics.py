"""Schrodinger propagation under a linear tilt ramp.

The ramp is ``eps(tau) = eps_max * tau / T_max`` up to ``T_max`` and constant
afterwards. Since ``H(tau) = H0 + eps(tau) D`` is linear in time on the ramp,
a fourth-order commutator Magnus step is used; the local error is estimated
by step doubling and the step adapted to a per-step tolerance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from .model import TiltedHubbard
from .spectral import low_spectrum, parse_label

log = logging.getLogger(__name__)

SQRT3_12 = np.sqrt(3.0) / 12.0
GAUSS = 0.5 - np.sqrt(3.0) / 6.0
REDUCE_LIMIT = 2000


class IntegrationError(RuntimeError):
    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


@dataclass(frozen=True)
class TiltSchedule:
    T_max: float
    eps_max: float
    hold: float = 0.0

    def __post_init__(self):
        if self.T_max <= 0:
            raise ValueError("T_max must be positive")
        if self.eps_max < 0:
            raise ValueError("eps_max must be non-negative")
        if self.hold < 0:
            raise ValueError("hold must be non-negative")

    @property
    def duration(self) -> float:
        return self.T_max + self.hold

    @property
    def rate(self) -> float:
        return self.eps_max / self.T_max

    def epsilon(self, tau):
        return schedule_epsilon(tau, self)

    def time_at(self, epsilon: float) -> float:
        """First time the ramp reaches ``epsilon``."""
        if self.eps_max == 0:
            return 0.0
        return min(epsilon / self.eps_max, 1.0) * self.T_max

    @classmethod
    def to_tilt(cls, epsilon: float, rate: float, hold: float = 0.0) -> "TiltSchedule":
        """Ramp at a fixed ``rate`` up to ``epsilon``, then hold."""
        if rate <= 0:
            raise ValueError("rate must be positive")
        return cls(max(epsilon / rate, 1e-12), epsilon, hold)


def schedule_epsilon(tau, schedule: TiltSchedule):
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValueError("time must be non-negative")
    out = schedule.eps_max * np.minimum(tau / schedule.T_max, 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass
class StateTrajectory:
    times: np.ndarray
    epsilons: np.ndarray
    states: Optional[np.ndarray]
    profiles: np.ndarray
    fidelity: Optional[np.ndarray] = None
    norms: Optional[np.ndarray] = None
    tracked: Optional[str] = None
    steps: int = 0

    def window(self, tau_a: float, tau_b: float) -> np.ndarray:
        m = (self.times >= tau_a - 1e-9) & (self.times <= tau_b + 1e-9)
        return m


def spin_subspace(S2, state, tol: float = 1e-12) -> Optional[np.ndarray]:
    """Orthonormal basis of the ``S^2`` eigenspaces that ``state`` occupies.

    ``state`` is a vector or a density matrix. Every operator used here
    (``H``, the tilt and the charge projectors) commutes with ``S^2``, so
    evolution never leaves this span. Returns ``None`` when the state
    touches every eigenspace and nothing would be gained.
    """
    S2 = S2.toarray() if sp.issparse(S2) else np.asarray(S2)
    w, v = np.linalg.eigh(S2)
    key = np.rint(w).astype(int)
    state = np.asarray(state)
    if state.ndim == 1:
        weights = np.abs(v.T @ state) ** 2
    else:
        weights = np.real(np.einsum("ij,ij->j", v.conj(), state @ v))
    keep = [s for s in np.unique(key) if weights[key == s].sum() > tol]
    if len(keep) == len(np.unique(key)):
        return None
    return v[:, np.isin(key, keep)]


class _Propagator:
    """Short-time propagators for ``i dpsi/dtau = H(tau) psi``.

    With ``basis`` (an isometry onto an invariant subspace) the dense
    propagators act on reduced coordinates.
    """

    def __init__(self, model: TiltedHubbard, schedule: TiltSchedule, dense_limit: int = 2000,
                 basis: Optional[np.ndarray] = None):
        self.model = model
        self.schedule = schedule
        self.basis = basis
        self.dense = model.dim <= dense_limit or basis is not None
        if basis is not None:
            self.h0 = basis.T @ (model.h0 @ basis)
            self.d = basis.T @ (model.tilt_diag[:, None] * basis)
            self.comm = self.h0 @ self.d - self.d @ self.h0
        elif self.dense:
            self.h0 = model.h0.toarray()
            d = model.tilt_diag.astype(float)
            self.d = np.diag(d)
            # [H0, D] for a diagonal D
            self.comm = self.h0 * (d[None, :] - d[:, None])
        else:
            self.comm = None

    @property
    def dim(self) -> int:
        return self.h0.shape[0] if self.dense else self.model.dim

    def reduce(self, psi):
        return psi if self.basis is None else self.basis.T @ psi

    def lift(self, psi):
        return psi if self.basis is None else self.basis @ psi

    def eps(self, tau, ramp):
        # linear continuation of the active segment, valid slightly outside it
        s = self.schedule
        return s.rate * tau if ramp else s.eps_max

    def on_ramp(self, t, h):
        return t + 0.5 * h < self.schedule.T_max

    def unitary(self, t, h, ramp=None):
        """Magnus-4 propagator from ``t`` to ``t + h`` (dense)."""
        if ramp is None:
            ramp = self.on_ramp(t, h)
        e1 = self.eps(t + GAUSS * h, ramp)
        e2 = self.eps(t + (1 - GAUSS) * h, ramp)
        K = 0.5 * h * (2 * self.h0 + (e1 + e2) * self.d)
        if e1 != e2:
            # [H2, H1] = (e1 - e2) [H0, D]
            K = K - 1j * SQRT3_12 * h * h * (e1 - e2) * self.comm
        w, v = np.linalg.eigh(K)
        return (v * np.exp(-1j * w)) @ v.conj().T

    def step(self, t, h, psi):
        if self.dense:
            return self.unitary(t, h) @ psi
        ramp = self.on_ramp(t, h)
        e1 = self.eps(t + GAUSS * h, ramp)
        e2 = self.eps(t + (1 - GAUSS) * h, ramp)
        H0 = self.model.h0
        D = sp.diags(self.model.tilt_diag)
        K = 0.5 * h * (2 * H0 + (e1 + e2) * D)
        if e1 != e2:
            K = K - 1j * SQRT3_12 * h * h * (e1 - e2) * (H0 @ D - D @ H0)
        return sla.expm_multiply(-1j * K.tocsc(), psi)


def _breakpoints(schedule: TiltSchedule, t_end: float):
    out = [schedule.T_max] if 0 < schedule.T_max < t_end else []
    return out


def propagate(step_fn, psi0, times, tol, max_step, breaks=(), h0=None, norm=np.linalg.norm, on_sample=None):
    """Adaptive step-doubling driver shared by the pure and mixed solvers.

    ``step_fn(t, h, x)`` advances ``x`` by ``h``; the local error estimate is
    the difference between one step and two half steps, divided by 15
    (fourth-order methods). Returns the states at ``times``.
    """
    times = np.asarray(times, dtype=float)
    out = []
    t = 0.0
    x = psi0
    h = h0 if h0 is not None else min(max_step, 1.0)
    stops = sorted(set(list(times) + [b for b in breaks if b < times[-1]]))
    n_steps = 0
    for stop in stops:
        while t < stop - 1e-12:
            h = min(h, max_step, stop - t)
            big = step_fn(t, h, x)
            half = step_fn(t, 0.5 * h, x)
            fine = step_fn(t + 0.5 * h, 0.5 * h, half)
            err = norm(fine - big) / 15.0
            if err <= tol or h < 1e-10:
                if h < 1e-10 and err > tol:
                    raise IntegrationError("step size underflow", time=t)
                t += h
                # local extrapolation would break exact unitarity; keep the fine solution
                x = fine
                n_steps += 1
                fac = 2.0 if err == 0 else min(2.0, max(0.2, 0.9 * (tol / err) ** 0.2))
                h *= fac
            else:
                h *= max(0.1, 0.9 * (tol / err) ** 0.2)
        if on_sample is not None and np.any(np.abs(times - stop) < 1e-12):
            on_sample(stop, x)
        if np.any(np.abs(times - stop) < 1e-12):
            out.append(x)
    return out, n_steps


class InstantaneousTracker:
    """Instantaneous eigenstate with a fixed spin label, sign-continued."""

    def __init__(self, model: TiltedHubbard, label: str, k: Optional[int] = None):
        from .model import build_spin_squared

        self.model = model
        self.label = label
        spin, rank = parse_label(label)
        self.k = k or max(8, 4 * rank + 4)
        self.S2 = build_spin_squared(model.sector)
        self._prev = None

    def __call__(self, epsilon: float) -> np.ndarray:
        k = min(self.k, self.model.dim)
        while True:
            recs = low_spectrum(self.model(epsilon), self.S2, k, sector=self.model.sector)
            hit = [r for r in recs if r.label == self.label]
            if hit or k >= self.model.dim:
                break
            k = min(2 * k, self.model.dim)
        if not hit:
            raise LookupError(f"no eigenstate labelled {self.label} at eps={epsilon}")
        v = hit[0].vector
        if self._prev is not None and np.vdot(self._prev, v).real < 0:
            v = -v
        self._prev = v
        return v


def instantaneous_fidelity(psi: np.ndarray, H, label: str, S2=None, k: int = 8) -> float:
    """``|<psi|phi>|^2`` with ``phi`` the eigenstate of ``H`` labelled ``label``."""
    if S2 is None:
        raise ValueError("S2 operator required")
    spin, rank = parse_label(label)
    recs = low_spectrum(H, S2, min(max(k, 4 * rank + 4), H.shape[0]))
    for r in recs:
        if r.label == label:
            return float(abs(np.vdot(r.vector, psi)) ** 2)
    raise LookupError(f"no eigenstate labelled {label}")


def sample_times(schedule: TiltSchedule, n: int = 500, refine_eps: Sequence[float] = (),
                 refine_width: float = 1.0, refine_n: int = 50) -> np.ndarray:
    """Uniform samples over the run plus dense ones around given tilts."""
    ts = [np.linspace(0.0, schedule.duration, n + 1)]
    for e in refine_eps:
        if e > schedule.eps_max:
            continue
        a = schedule.time_at(max(e - refine_width, 0.0))
        b = schedule.time_at(min(e + refine_width, schedule.eps_max))
        ts.append(np.linspace(a, b, refine_n))
    t = np.unique(np.round(np.concatenate(ts), 9))
    return t[(t >= 0) & (t <= schedule.duration)]


def evolve_state(psi0: np.ndarray, model: TiltedHubbard, schedule: TiltSchedule, tol: float = 1e-8,
                 max_step: float = 50.0, times: Optional[np.ndarray] = None, track: Optional[str] = None,
                 keep_states: bool = True, reduce: bool = True) -> StateTrajectory:
    """Integrate ``i dpsi/dtau = H(eps(tau)) psi`` from ``psi0`` at ``tau = 0``.

    ``tol`` bounds the estimated local error per step. When ``track`` names a
    state label (``"S1"``, ``"T2"`` ...) the fidelity against the matching
    instantaneous eigenstate is recorded at every sample. With ``reduce``
    small sectors are propagated inside the total-spin eigenspaces that
    ``psi0`` occupies.
    """
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.shape != (model.dim,):
        raise ValueError("initial state has the wrong dimension")
    if abs(np.linalg.norm(psi0) - 1.0) > 1e-8:
        raise ValueError("initial state must be normalized")
    if times is None:
        times = sample_times(schedule)
    times = np.asarray(times, dtype=float)
    if times[0] != 0.0:
        times = np.concatenate([[0.0], times])
    basis = None
    if reduce and model.dim <= REDUCE_LIMIT:
        from .model import build_spin_squared

        basis = spin_subspace(build_spin_squared(model.sector), psi0)
    prop = _Propagator(model, schedule, basis=basis)
    tracker = InstantaneousTracker(model, track) if track else None
    fid = []

    def on_sample(t, x):
        if tracker is not None:
            phi = tracker(schedule.epsilon(t))
            fid.append(abs(np.vdot(phi, prop.lift(x))) ** 2)

    on_sample(0.0, prop.reduce(psi0))
    rest, n_steps = propagate(prop.step, prop.reduce(psi0), times[1:], tol, max_step,
                              breaks=_breakpoints(schedule, times[-1]), on_sample=on_sample)
    states = np.vstack([psi0] + [prop.lift(x) for x in rest])
    return StateTrajectory(
        times=times,
        epsilons=schedule.epsilon(times),
        states=states if keep_states else None,
        profiles=(np.abs(states) ** 2) @ model.sector.occupations,
        fidelity=np.array(fid) if tracker else None,
        norms=np.linalg.norm(states, axis=1),
        tracked=track,
        steps=n_steps,
    )


def time_averaged_charge(trajectory: StateTrajectory, window: tuple[float, float]) -> np.ndarray:
    """Mean charge profile over samples in ``[tau_a, tau_b]``, weighted uniformly in time.

    Samples are combined with trapezoid weights so that non-uniform sampling
    does not bias the average.
    """
    a, b = window
    m = trajectory.window(a, b)
    if m.sum() == 0:
        raise ValueError(f"no samples in window {window}")
    t = trajectory.times[m]
    p = trajectory.profiles[m]
    if len(t) == 1 or t[-1] == t[0]:
        return p.mean(axis=0)
    return np.trapezoid(p, t, axis=0) / (t[-1] - t[0])


def time_bound_from_gap(gap: float) -> float:
    """Ramp duration ``1 / gap^2`` above which a ramp counts as adiabatic."""
    if gap <= 0:
        raise ValueError("gap must be positive")
    return 1.0 / gap**2


def adiabatic_time_bound(table, spin: float, refine: bool = False) -> float:
    """``1 / dE^2`` with ``dE`` the minimum gap of ``spin`` states in ``table``."""
    from .spectral import min_gap

    return time_bound_from_gap(min_gap(table, spin, refine=refine)[1])
