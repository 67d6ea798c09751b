"""Tilted extended Fermi-Hubbard Hamiltonian, total spin and charge projectors.

Energies are in units of the tunnelling ``t`` (``hbar = 1``). The Hamiltonian is

    H = t sum_<kl>,s (c+_ks c_ls + h.c.) + sum_k eps_k n_k
        + V sum_<kl> n_k n_l + U/2 sum_k n_k (n_k - 1)

with the hopping sign taken literally (``+t``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .fock import BasisSector, popcount

DEFAULT_U = 40.0
DEFAULT_V = 10.0


@dataclass(frozen=True)
class ModelParams:
    t: float = 1.0
    U: float = DEFAULT_U
    V: float = DEFAULT_V
    hop_sign: int = 1

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("t must be non-negative")
        if self.U < 0:
            raise ValueError("U must be non-negative")
        if self.V < 0:
            raise ValueError("V must be non-negative")
        if self.hop_sign not in (1, -1):
            raise ValueError("hop_sign must be +1 or -1")


@dataclass(frozen=True)
class Geometry:
    """Open chain or two-leg ladder.

    Ladder sites are labelled around the ring: the top row left to right
    (``0 .. C-1``), then the bottom row right to left (``C .. 2C-1``). Site
    ``k`` and site ``N-1-k`` therefore form a rung.
    """

    kind: str
    sites: int
    edges: tuple[tuple[int, int], ...] = field(repr=False)
    cols: int = 0

    @classmethod
    def chain(cls, n: int) -> "Geometry":
        if n < 2:
            raise ValueError("a chain needs at least two sites")
        return cls("chain", n, tuple((k, k + 1) for k in range(n - 1)))

    @classmethod
    def ladder(cls, cols: int) -> "Geometry":
        if cols < 2:
            raise ValueError("a ladder needs at least two columns")
        n = 2 * cols
        top = [(j, j + 1) for j in range(cols - 1)]
        bottom = [(cols + i, cols + i + 1) for i in range(cols - 1)]
        rungs = [(j, n - 1 - j) for j in range(cols)]
        return cls("ladder", n, tuple(top + bottom + rungs), cols)

    def tilt_profile(self, epsilon: float) -> np.ndarray:
        return tilt_profile(self, epsilon)

    @property
    def spec(self) -> dict:
        if self.kind == "ladder":
            return {"kind": "ladder", "cols": self.cols}
        return {"kind": "chain", "sites": self.sites}


def tilt_profile(geometry: Geometry, epsilon: float) -> np.ndarray:
    """Per-site potentials for a uniform tilt of strength ``epsilon``.

    A chain gets the ramp ``k * epsilon``; a ladder gets the same ramp along
    its axis, with both sites of a rung at equal potential.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    n = geometry.sites
    k = np.arange(n, dtype=float)
    if geometry.kind == "ladder":
        k = np.minimum(k, n - 1 - k)
    return k * epsilon


def _hopping(geometry: Geometry, sector: BasisSector):
    rows, cols, vals = [], [], []
    up, down = sector.up, sector.down
    for a, b in geometry.edges:
        lo, hi = min(a, b), max(a, b)
        between = ((1 << hi) - 1) ^ ((1 << (lo + 1)) - 1)
        pair = (1 << a) | (1 << b)
        for spin_bits, other, is_up in ((up, down, True), (down, up, False)):
            # exactly one of the two sites occupied: the hop moves it across
            movable = popcount(spin_bits & pair) == 1
            src = np.nonzero(movable)[0]
            new = spin_bits[src] ^ pair
            sign = 1 - 2 * (popcount(spin_bits[src] & between) % 2)
            if is_up:
                dst = sector.indices(new, other[src])
            else:
                dst = sector.indices(other[src], new)
            rows.append(dst)
            cols.append(src)
            vals.append(sign.astype(float))
    if not rows:
        return sp.csr_matrix((sector.dim, sector.dim))
    r, c, v = (np.concatenate(x) for x in (rows, cols, vals))
    return sp.csr_matrix((v, (r, c)), shape=(sector.dim, sector.dim))


def _check(geometry: Geometry, sector: BasisSector):
    if geometry.sites != sector.sites:
        raise ValueError(
            f"geometry has {geometry.sites} sites but the sector has {sector.sites}"
        )
    if sector.dim == 0:
        raise ValueError("empty sector")


def interaction_diagonal(geometry: Geometry, params: ModelParams, sector: BasisSector) -> np.ndarray:
    """Diagonal of the ``U`` and ``V`` terms."""
    n = sector.occupations.astype(float)
    diag = 0.5 * params.U * np.sum(n * (n - 1), axis=1)
    for a, b in geometry.edges:
        diag += params.V * n[:, a] * n[:, b]
    return diag


class TiltedHubbard:
    """Hamiltonian family ``H(eps) = H0 + eps * diag(D)``, linear in the tilt."""

    def __init__(self, geometry: Geometry, params: ModelParams, sector: BasisSector):
        _check(geometry, sector)
        self.geometry = geometry
        self.params = params
        self.sector = sector
        hop = params.hop_sign * params.t * _hopping(geometry, sector)
        self.h0 = (hop + sp.diags(interaction_diagonal(geometry, params, sector))).tocsr()
        self.tilt_diag = sector.occupations @ tilt_profile(geometry, 1.0)

    @property
    def dim(self) -> int:
        return self.sector.dim

    def __call__(self, epsilon: float) -> sp.csr_matrix:
        if epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        return (self.h0 + sp.diags(epsilon * self.tilt_diag)).tocsr()

    def matvec(self, epsilon: float, v: np.ndarray) -> np.ndarray:
        """``H(eps) @ v`` without forming the matrix; ``v`` may be 2-D."""
        d = epsilon * self.tilt_diag
        if v.ndim == 2:
            d = d[:, None]
        return self.h0 @ v + d * v

    def dense(self, epsilon: float) -> np.ndarray:
        return self(epsilon).toarray()


def build_hamiltonian(geometry: Geometry, params: ModelParams, epsilon: float, sector: BasisSector) -> sp.csr_matrix:
    return TiltedHubbard(geometry, params, sector)(epsilon)


def build_spin_squared(sector: BasisSector) -> sp.csr_matrix:
    """Total spin ``S^2`` over the sector.

    Uses ``S^2 = Sz^2 + 1/2 sum_k (n_up + n_dn - 2 n_up n_dn)_k
    + sum_{k != l} S+_k S-_l``, where ``S+_k S-_l`` is a spin-up hop
    ``l -> k`` times a spin-down hop ``k -> l`` with an extra minus sign
    from operator reordering.
    """
    up, down = sector.up, sector.down
    dim = sector.dim
    sz = 0.5 * (sector.n_up - sector.n_down)
    nu = popcount(up)
    nd = popcount(down)
    double = popcount(up & down)
    diag = sz * sz + 0.5 * (nu + nd - 2 * double)
    rows, cols, vals = [np.arange(dim)], [np.arange(dim)], [diag.astype(float)]
    for k in range(sector.sites):
        for l in range(sector.sites):
            if k == l:
                continue
            bk, bl = 1 << k, 1 << l
            # up electron on l, not on k; down electron on k, not on l
            ok = ((up & bl) != 0) & ((up & bk) == 0) & ((down & bk) != 0) & ((down & bl) == 0)
            src = np.nonzero(ok)[0]
            if src.size == 0:
                continue
            between = ((1 << max(k, l)) - 1) ^ ((1 << (min(k, l) + 1)) - 1)
            u, d = up[src], down[src]
            parity = popcount(u & between) + popcount(d & between) + 1
            dst = sector.indices(u ^ bk ^ bl, d ^ bk ^ bl)
            rows.append(dst)
            cols.append(src)
            vals.append((1 - 2 * (parity % 2)).astype(float))
    r, c, v = (np.concatenate(x) for x in (rows, cols, vals))
    return sp.csr_matrix((v, (r, c)), shape=(dim, dim))


def build_sz(sector: BasisSector) -> sp.csr_matrix:
    sz = 0.5 * (popcount(sector.up) - popcount(sector.down))
    return sp.diags(sz.astype(float)).tocsr()


def build_number(sector: BasisSector) -> sp.csr_matrix:
    return sp.diags(sector.occupations.sum(axis=1).astype(float)).tocsr()


@dataclass(frozen=True)
class ChargeProjector:
    """Projector onto one charge configuration; diagonal in the occupation basis."""

    config: tuple[int, ...]
    indices: np.ndarray = field(repr=False)
    dim: int = field(repr=False)

    @property
    def rank(self) -> int:
        return len(self.indices)

    def matrix(self) -> sp.csr_matrix:
        d = np.zeros(self.dim)
        d[self.indices] = 1.0
        return sp.diags(d).tocsr()


def build_charge_projectors(sector: BasisSector) -> list[ChargeProjector]:
    """One projector per charge configuration present, ordered lexicographically."""
    occ = sector.occupations
    configs, inverse = np.unique(occ, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(len(configs) + 1))
    out = []
    for j, cfg in enumerate(configs):
        idx = np.sort(order[bounds[j] : bounds[j + 1]])
        idx.setflags(write=False)
        out.append(ChargeProjector(tuple(int(x) for x in cfg), idx, sector.dim))
    return out


def config_labels(sector: BasisSector, projectors: Sequence[ChargeProjector]) -> np.ndarray:
    """For each basis state, the position of its configuration in ``projectors``."""
    lab = np.empty(sector.dim, dtype=np.int64)
    for j, p in enumerate(projectors):
        lab[p.indices] = j
    return lab
