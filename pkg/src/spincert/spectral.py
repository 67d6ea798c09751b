"""Low-lying eigenstates with total-spin labels, tilt sweeps and gap analysis."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla
from scipy.optimize import linear_sum_assignment, minimize_scalar

from .fock import BasisSector, half_filling
from .model import Geometry, ModelParams, TiltedHubbard, build_spin_squared

log = logging.getLogger(__name__)

DENSE_LIMIT = 1000
DEGENERACY_RTOL = 1e-9
SPIN_LETTERS = {0.0: "S", 1.0: "T", 2.0: "Q"}
CHAIN_GRID = (0.0, 70.0, 0.25)
LADDER_GRID = (0.0, 100.0, 0.5)


class EigensolverError(RuntimeError):
    """Raised when the iterative solver misses its residual target."""

    def __init__(self, message, residual=np.nan, epsilon=None):
        super().__init__(message)
        self.residual = residual
        self.epsilon = epsilon


def spin_label(total_spin: float, rank: int) -> str:
    letter = SPIN_LETTERS.get(float(total_spin))
    if letter is None:
        return f"S{total_spin:g}_{rank}"
    return f"{letter}{rank}"


def parse_label(label: str) -> tuple[float, int]:
    """Inverse of :func:`spin_label` for the lettered labels ``S1``, ``T2`` ..."""
    for s, letter in SPIN_LETTERS.items():
        if label.startswith(letter) and label[1:].isdigit():
            return s, int(label[1:])
    raise ValueError(f"unrecognised state label {label!r}")


@dataclass
class EigenstateRecord:
    energy: float
    vector: Optional[np.ndarray] = field(repr=False)
    total_spin: float
    spin_rank: int = 0
    charge_profile: Optional[np.ndarray] = None
    spin_residual: float = 0.0

    @property
    def label(self) -> str:
        return spin_label(self.total_spin, self.spin_rank)


def charge_profile(vector, sector: BasisSector) -> np.ndarray:
    """Site-resolved occupation ``<n_k>`` of a state vector (or record)."""
    if isinstance(vector, EigenstateRecord):
        vector = vector.vector
    prob = np.abs(vector) ** 2
    return prob @ sector.occupations


def operator_norm_bound(H) -> float:
    """Cheap upper bound on the spectral norm (max absolute row sum)."""
    if sp.issparse(H):
        return float(abs(H).sum(axis=1).max())
    return float(np.abs(H).sum(axis=1).max())


def spin_from_s2(s2: float) -> float:
    """Total spin ``S`` from an ``S(S+1)`` value, snapped to half-integers."""
    s = 0.5 * (np.sqrt(1.0 + 4.0 * max(s2, 0.0)) - 1.0)
    return round(2.0 * s) / 2.0


# -- eigensolvers -----------------------------------------------------------


def _dense_lowest(H, k):
    A = H.toarray() if sp.issparse(H) else np.asarray(H)
    w, v = np.linalg.eigh(A)
    return w[:k], v[:, :k]


def _jacobi(H, shift):
    d = H.diagonal()

    def apply(x):
        scale = np.maximum(d - shift, 1.0)
        return x / (scale[:, None] if x.ndim == 2 else scale)

    return sla.LinearOperator(H.shape, matvec=apply, matmat=apply, dtype=float)


def _iterative_lowest(H, k, atol, guess=None, buffer=4):
    n = H.shape[0]
    m = min(k + buffer, n - 1)
    if guess is not None and guess.shape[1] >= m:
        X = guess[:, :m]
        shift = float(np.min(np.einsum("ij,ij->j", X, H @ X)))
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                w, v = sla.lobpcg(H, X, M=_jacobi(H, shift), largest=False, tol=atol, maxiter=200)
            order = np.argsort(w)
            w, v = w[order], v[:, order]
            res = np.linalg.norm(H @ v[:, :k] - v[:, :k] * w[:k], axis=0)
            if np.all(res <= 10 * atol):
                return w, v
            log.debug("warm start missed tolerance (%.2e); falling back", res.max())
        except (np.linalg.LinAlgError, ValueError) as exc:
            log.debug("lobpcg failed: %s", exc)
    # implicitly restarted Lanczos
    w, v = sla.eigsh(H, k=m, which="SA", tol=atol * 1e-3, ncv=min(n, max(2 * m + 1, 40)))
    order = np.argsort(w)
    return w[order], v[:, order]


def lowest_eigenpairs(H, k: int, tol: float = 1e-9, guess=None, dense_limit: int = DENSE_LIMIT):
    """``k`` lowest eigenpairs of a real symmetric matrix.

    Dense diagonalization below ``dense_limit``; above it a warm-started
    LOBPCG (when ``guess`` is given) or implicitly restarted Lanczos. The
    residual contract is ``||Hv - Ev|| <= tol * ||H||``.
    """
    n = H.shape[0]
    if k > n:
        raise ValueError(f"asked for {k} eigenpairs of a {n}-dimensional operator")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if n <= dense_limit:
        return _dense_lowest(H, k)
    atol = tol * operator_norm_bound(H)
    w, v = _iterative_lowest(H, k, atol, guess)
    w, v = w[:k], v[:, :k]
    res = np.linalg.norm(H @ v - v * w, axis=0)
    if np.any(res > 10 * atol):
        raise EigensolverError(
            f"eigensolver residual {res.max():.3e} exceeds {atol:.3e}", residual=float(res.max())
        )
    return w, v


def _rotate_degenerate(w, v, S2):
    """Diagonalize ``S2`` inside clusters of degenerate energies."""
    v = v.copy()
    i = 0
    while i < len(w):
        j = i + 1
        while j < len(w) and abs(w[j] - w[i]) < DEGENERACY_RTOL * max(1.0, abs(w[i])):
            j += 1
        if j - i > 1:
            block = v[:, i:j]
            m = block.T @ (S2 @ block)
            _, u = np.linalg.eigh(0.5 * (m + m.T))
            v[:, i:j] = block @ u
        i = j
    return v


def _records(w, v, S2, sector: Optional[BasisSector]):
    v = _rotate_degenerate(w, v, S2)
    s2 = np.einsum("ij,ij->j", v, S2 @ v)
    recs = []
    counts: dict[float, int] = {}
    for j in range(len(w)):
        spin = spin_from_s2(s2[j])
        counts[spin] = counts.get(spin, 0) + 1
        prof = charge_profile(v[:, j], sector) if sector is not None else None
        recs.append(
            EigenstateRecord(
                energy=float(w[j]),
                vector=v[:, j],
                total_spin=spin,
                spin_rank=counts[spin],
                charge_profile=prof,
                spin_residual=float(abs(s2[j] - spin * (spin + 1))),
            )
        )
    return recs


def low_spectrum(H, S2, k: int, tol: float = 1e-9, sector: Optional[BasisSector] = None, guess=None) -> list[EigenstateRecord]:
    """The ``k`` lowest eigenstates of ``H``, labelled by total spin.

    Spin ranks (``S1``, ``S2``, ``T1`` ...) count states of equal spin
    among the returned ones, in ascending energy.
    """
    w, v = lowest_eigenpairs(H, k, tol, guess)
    return _records(w, v, S2, sector)


# -- spin-flip symmetry -----------------------------------------------------


def spin_flip_blocks(sector: BasisSector) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Isometries onto the even and odd subspaces of the up/down exchange.

    Only defined for ``n_up == n_down``. The exchange maps ``|u, d>`` to
    ``(-1)^(n_up n_down) |d, u>`` and commutes with ``H`` and ``S^2``, so each
    block holds only even or only odd total spins.
    """
    if sector.n_up != sector.n_down:
        raise ValueError("spin-flip symmetry needs n_up == n_down")
    n = sector.dim
    partner = sector.indices(sector.down, sector.up)
    sign = -1.0 if (sector.n_up * sector.n_down) % 2 else 1.0
    i = np.arange(n)
    pairs = i[i < partner]
    fixed = i[i == partner]
    r2 = 1.0 / np.sqrt(2.0)
    blocks = []
    for parity in (1.0, -1.0):
        keep = fixed if sign * parity > 0 else fixed[:0]
        cols = np.concatenate([np.arange(len(pairs)), np.arange(len(pairs)), len(pairs) + np.arange(len(keep))])
        rows = np.concatenate([pairs, partner[pairs], keep])
        vals = np.concatenate([np.full(len(pairs), r2), np.full(len(pairs), parity * sign * r2), np.ones(len(keep))])
        blocks.append(sp.csr_matrix((vals, (rows, cols)), shape=(n, len(pairs) + len(keep))))
    return blocks[0], blocks[1]


# -- sweeps -----------------------------------------------------------------


@dataclass
class SweepTable:
    """Low spectrum on an ascending tilt grid.

    ``links[j][i]`` is the index at grid point ``j + 1`` of the state that
    continues record ``i`` of grid point ``j`` (maximal overlap among states
    of equal spin), or ``-1``.
    """

    epsilons: np.ndarray
    records: list[list[EigenstateRecord]]
    links: list[np.ndarray]
    geometry: Optional[Geometry] = None
    params: Optional[ModelParams] = None
    solver: Optional[Callable[[float], list[EigenstateRecord]]] = field(default=None, repr=False)

    def __len__(self):
        return len(self.epsilons)

    def labels(self) -> list[str]:
        seen = []
        for recs in self.records:
            for r in recs:
                if r.label not in seen:
                    seen.append(r.label)
        return seen

    def record(self, j: int, label: str) -> Optional[EigenstateRecord]:
        for r in self.records[j]:
            if r.label == label:
                return r
        return None

    def energies(self, label: str) -> np.ndarray:
        out = np.full(len(self), np.nan)
        for j in range(len(self)):
            r = self.record(j, label)
            if r is not None:
                out[j] = r.energy
        return out

    def profiles(self, label: str) -> np.ndarray:
        n = self.geometry.sites if self.geometry else len(self.records[0][0].charge_profile)
        out = np.full((len(self), n), np.nan)
        for j in range(len(self)):
            r = self.record(j, label)
            if r is not None and r.charge_profile is not None:
                out[j] = r.charge_profile
        return out

    def gaps(self, spin: float, ranks=(1, 2)) -> np.ndarray:
        lo, hi = (spin_label(spin, r) for r in ranks)
        return self.energies(hi) - self.energies(lo)

    def at(self, epsilon: float) -> list[EigenstateRecord]:
        j = int(np.argmin(np.abs(self.epsilons - epsilon)))
        if abs(self.epsilons[j] - epsilon) > 1e-9 and self.solver is not None:
            return self.solver(epsilon)
        return self.records[j]

    def to_csv(self, path, fmt=None):
        from .io import write_sweep_csv

        write_sweep_csv(self, path)


class SpectrumSolver:
    """Callable returning the low spectrum of a tilted Hubbard model at a given tilt.

    Warm-starts the iterative solver from the previous call; uses the spin
    flip block decomposition when the sector allows it.
    """

    def __init__(self, geometry: Geometry, params: ModelParams, k: int, tol: float = 1e-9,
                 sector: Optional[BasisSector] = None, spin_flip: bool = True, keep_vectors: bool = True):
        self.sector = sector if sector is not None else half_filling(geometry.sites)
        self.model = TiltedHubbard(geometry, params, self.sector)
        self.S2 = build_spin_squared(self.sector)
        self.k = k
        self.tol = tol
        self.keep_vectors = keep_vectors
        self.blocks = None
        if spin_flip and self.sector.n_up == self.sector.n_down and self.sector.dim > DENSE_LIMIT:
            self.blocks = []
            for Q in spin_flip_blocks(self.sector):
                self.blocks.append((Q, (Q.T @ self.model.h0 @ Q).tocsr(), Q.T @ sp.diags(self.model.tilt_diag) @ Q))
        self._guess = None

    def __call__(self, epsilon: float) -> list[EigenstateRecord]:
        if self.blocks is None:
            H = self.model(epsilon)
            guess = self._guess[0] if self._guess is not None else None
            n = H.shape[0]
            if n > DENSE_LIMIT:
                atol = self.tol * operator_norm_bound(H)
                wf, vf = _iterative_lowest(H, self.k, atol, guess)
                res = np.linalg.norm(H @ vf[:, : self.k] - vf[:, : self.k] * wf[: self.k], axis=0)
                if np.any(res > 10 * atol):
                    raise EigensolverError(f"residual {res.max():.3e}", float(res.max()), epsilon)
                self._guess = [vf]
                w, v = wf[: self.k], vf[:, : self.k]
            else:
                w, v = _dense_lowest(H, self.k)
        else:
            ws, vs, guesses = [], [], []
            for Q, h0, tilt in self.blocks:
                H = (h0 + epsilon * tilt).tocsr()
                guess = self._guess[len(guesses)] if self._guess is not None else None
                atol = self.tol * operator_norm_bound(H)
                kb = min(self.k, H.shape[0])
                wf, vf = _iterative_lowest(H, kb, atol, guess)
                res = np.linalg.norm(H @ vf[:, :kb] - vf[:, :kb] * wf[:kb], axis=0)
                if np.any(res > 10 * atol):
                    raise EigensolverError(f"residual {res.max():.3e}", float(res.max()), epsilon)
                guesses.append(vf)
                ws.append(wf[:kb])
                vs.append(Q @ vf[:, :kb])
            self._guess = guesses
            w = np.concatenate(ws)
            v = np.hstack(vs)
            order = np.argsort(w)[: self.k]
            w, v = w[order], v[:, order]
        recs = _records(w, v, self.S2, self.sector)
        if not self.keep_vectors:
            for r in recs:
                r.vector = None
        return recs

    def reset(self):
        self._guess = None


def _link(prev_v, prev_recs, recs):
    """Match states across neighbouring grid points by maximal overlap."""
    out = np.full(len(prev_recs), -1)
    for spin in {r.total_spin for r in prev_recs}:
        a = [i for i, r in enumerate(prev_recs) if r.total_spin == spin]
        b = [i for i, r in enumerate(recs) if r.total_spin == spin]
        if not a or not b:
            continue
        cur = np.column_stack([recs[i].vector for i in b])
        ov = np.abs(prev_v[:, a].T @ cur)
        ra, cb = linear_sum_assignment(-ov)
        for x, y in zip(ra, cb):
            out[a[x]] = b[y]
    return out


def sweep_spectrum(geometry: Geometry, params: ModelParams, eps_grid: Sequence[float], k: int,
                   tol: float = 1e-9, keep_vectors: bool = False, spin_flip: bool = True,
                   solver: Optional[SpectrumSolver] = None) -> SweepTable:
    """Low spectrum at every point of an ascending tilt grid."""
    eps = np.asarray(eps_grid, dtype=float)
    if eps.ndim != 1 or len(eps) == 0:
        raise ValueError("tilt grid must be a non-empty 1-D sequence")
    if np.any(np.diff(eps) <= 0):
        raise ValueError("tilt grid must be strictly increasing")
    if solver is None:
        solver = SpectrumSolver(geometry, params, k, tol, spin_flip=spin_flip, keep_vectors=True)
    rows, links = [], []
    prev = None
    for e in eps:
        try:
            recs = solver(float(e))
        except EigensolverError as exc:
            exc.epsilon = float(e)
            raise
        if prev is not None:
            links.append(_link(prev, rows[-1], recs))
        prev = np.column_stack([r.vector for r in recs])
        if not keep_vectors:
            for r in recs:
                r.vector = None
        rows.append(recs)
    refine = SpectrumSolver(geometry, params, k, tol, spin_flip=spin_flip)
    return SweepTable(eps, rows, links, geometry, params, refine)


# -- gap analysis -----------------------------------------------------------


def _gap_at(table: SweepTable, spin: float, ranks, epsilon: float) -> float:
    recs = table.solver(epsilon)
    lo, hi = (spin_label(spin, r) for r in ranks)
    e = {r.label: r.energy for r in recs}
    if lo not in e or hi not in e:
        raise EigensolverError(f"{lo}/{hi} not among the computed states at eps={epsilon}", epsilon=epsilon)
    return e[hi] - e[lo]


def _refine(table, spin, ranks, j, xtol):
    eps = table.epsilons
    a = eps[max(j - 1, 0)]
    b = eps[min(j + 1, len(eps) - 1)]
    if table.solver is None or a == b:
        return float(eps[j]), float(table.gaps(spin, ranks)[j])
    table.solver.reset()
    res = minimize_scalar(
        lambda x: _gap_at(table, spin, ranks, x),
        bracket=(a, eps[j], b) if 0 < j < len(eps) - 1 else None,
        bounds=None if 0 < j < len(eps) - 1 else (a, b),
        method="golden" if 0 < j < len(eps) - 1 else "bounded",
        options={"xtol": xtol / max(abs(eps[j]), 1.0)} if 0 < j < len(eps) - 1 else {"xatol": xtol},
    )
    x = float(np.clip(res.x, a, b))
    return x, float(_gap_at(table, spin, ranks, x))


def detect_anticrossings(table: SweepTable, spin: float, ranks=(1, 2), refine: bool = True,
                         xtol: float = 1e-3) -> list[tuple[float, float]]:
    """Interior local minima of a same-spin gap, optionally refined off-grid."""
    g = table.gaps(spin, ranks)
    if np.sum(np.isfinite(g)) < 3:
        return []
    out = []
    for j in range(1, len(g) - 1):
        if not np.isfinite(g[j - 1 : j + 2]).all():
            continue
        if g[j] < g[j - 1] and g[j] <= g[j + 1]:
            out.append(_refine(table, spin, ranks, j, xtol) if refine else (float(table.epsilons[j]), float(g[j])))
    return out


def min_gap(table: SweepTable, spin: float, ranks=(1, 2), refine: bool = True, xtol: float = 1e-3) -> tuple[float, float]:
    """Global minimum of a same-spin gap over the grid range.

    Returns ``(epsilon, gap)``. With ``refine=False`` the minimum is taken
    over the grid points only.
    """
    g = table.gaps(spin, ranks)
    if not np.isfinite(g).any():
        raise ValueError(f"fewer than two states of spin {spin} in the table")
    j = int(np.nanargmin(g))
    best = (float(table.epsilons[j]), float(g[j]))
    if not refine:
        return best
    cands = [best] + [(e, v) for e, v in detect_anticrossings(table, spin, ranks, refine=True, xtol=xtol)]
    if 0 < j < len(g) - 1 and not any(abs(e - best[0]) < 2 * np.max(np.diff(table.epsilons)) for e, _ in cands[1:]):
        cands.append(_refine(table, spin, ranks, j, xtol))
    return min(cands, key=lambda c: c[1])


def grid(start: float, stop: float, step: float) -> np.ndarray:
    """Inclusive uniform grid, rounded to suppress float drift."""
    n = int(round((stop - start) / step))
    return np.round(start + step * np.arange(n + 1), 10)
