"""Occupation-number basis for spinful fermions on a finite lattice.

A basis state is a pair of bitmasks ``(up_bits, down_bits)``; bit ``k`` of
``up_bits`` is set when site ``k`` holds a spin-up electron. Sites are
0-indexed throughout the package.

Fermionic signs use the canonical mode order: all spin-up modes by ascending
site, followed by all spin-down modes by ascending site.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
from math import comb
from typing import Optional

import numpy as np

MAX_SITES = 32

UP = 0
DOWN = 1


def popcount(x):
    """Number of set bits; works elementwise on integer arrays."""
    if isinstance(x, np.ndarray):
        return np.bitwise_count(x).astype(np.int64)
    return bin(int(x)).count("1")


def between_mask(a, b):
    """Bitmask of the sites strictly between ``a`` and ``b``."""
    lo, hi = min(a, b), max(a, b)
    return ((1 << hi) - 1) ^ ((1 << (lo + 1)) - 1)


@dataclass(frozen=True, order=True)
class FockState:
    up_bits: int
    down_bits: int

    @classmethod
    def from_sites(cls, up=(), down=()):
        u = 0
        for k in up:
            u |= 1 << k
        d = 0
        for k in down:
            d |= 1 << k
        return cls(u, d)

    def occupancy(self, site: int) -> int:
        return ((self.up_bits >> site) & 1) + ((self.down_bits >> site) & 1)

    def charges(self, sites: int) -> tuple[int, ...]:
        return tuple(self.occupancy(k) for k in range(sites))


def occupancy(state: FockState, site: int) -> int:
    """Number of electrons (0, 1 or 2) on ``site``."""
    return state.occupancy(site)


def apply_hop(state: FockState, src: int, dst: int, spin: int) -> Optional[tuple[FockState, int]]:
    """Apply ``c^dagger_{dst,spin} c_{src,spin}`` to a basis state.

    Returns ``(new_state, sign)`` or ``None`` when the term annihilates the
    state (source empty or destination occupied).
    """
    if src == dst:
        raise ValueError("hop needs two distinct sites")
    bits = state.up_bits if spin == UP else state.down_bits
    if not (bits >> src) & 1 or (bits >> dst) & 1:
        return None
    sign = -1 if popcount(bits & between_mask(src, dst)) % 2 else 1
    new = bits ^ (1 << src) ^ (1 << dst)
    if spin == UP:
        return FockState(new, state.down_bits), sign
    return FockState(state.up_bits, new), sign


def _masks(sites: int, n: int) -> np.ndarray:
    out = [sum(1 << k for k in c) for c in combinations(range(sites), n)]
    return np.array(sorted(out), dtype=np.int64)


class BasisSector:
    """All Fock states with ``n_up`` spin-up and ``n_down`` spin-down electrons.

    States are ordered lexicographically on ``(up_bits, down_bits)``. Because
    the sector is a Cartesian product, the ordinal of a state is
    ``rank(up) * n_down_masks + rank(down)``.
    """

    def __init__(self, sites: int, n_up: int, n_down: int):
        if sites < 1 or sites > MAX_SITES:
            raise ValueError(f"sites must be in [1, {MAX_SITES}], got {sites}")
        if n_up < 0 or n_down < 0:
            raise ValueError("electron counts must be non-negative")
        if n_up > sites or n_down > sites:
            raise ValueError("more electrons of one spin than sites")
        self.sites = sites
        self.n_up = n_up
        self.n_down = n_down
        self.up_masks = _masks(sites, n_up)
        self.down_masks = _masks(sites, n_down)
        nd = len(self.down_masks)
        self.up = np.repeat(self.up_masks, nd)
        self.down = np.tile(self.down_masks, len(self.up_masks))
        for arr in (self.up_masks, self.down_masks, self.up, self.down):
            arr.setflags(write=False)

    @property
    def dim(self) -> int:
        return len(self.up)

    def __len__(self) -> int:
        return self.dim

    def __repr__(self) -> str:
        return f"BasisSector(sites={self.sites}, n_up={self.n_up}, n_down={self.n_down}, dim={self.dim})"

    @property
    def n_electrons(self) -> int:
        return self.n_up + self.n_down

    @property
    def states(self) -> list[FockState]:
        return [FockState(int(u), int(d)) for u, d in zip(self.up, self.down)]

    def __getitem__(self, i: int) -> FockState:
        return FockState(int(self.up[i]), int(self.down[i]))

    def index_of(self, state: FockState) -> int:
        i = self.indices(np.array([state.up_bits]), np.array([state.down_bits]))[0]
        if i < 0:
            raise KeyError(state)
        return int(i)

    def indices(self, up: np.ndarray, down: np.ndarray) -> np.ndarray:
        """Vectorized ordinal lookup; ``-1`` marks states outside the sector."""
        iu = np.searchsorted(self.up_masks, up)
        idn = np.searchsorted(self.down_masks, down)
        iu_c = np.minimum(iu, len(self.up_masks) - 1)
        id_c = np.minimum(idn, len(self.down_masks) - 1)
        ok = (self.up_masks[iu_c] == up) & (self.down_masks[id_c] == down)
        return np.where(ok, iu_c * len(self.down_masks) + id_c, -1)

    @cached_property
    def occupations(self) -> np.ndarray:
        """Integer array ``(dim, sites)`` of site charges ``n_k`` per state."""
        k = np.arange(self.sites)
        n = ((self.up[:, None] >> k) & 1) + ((self.down[:, None] >> k) & 1)
        n = n.astype(np.int8)
        n.setflags(write=False)
        return n


def enumerate_sector(sites: int, n_up: int, n_down: int) -> BasisSector:
    return BasisSector(sites, n_up, n_down)


def half_filling(sites: int) -> BasisSector:
    """The ``S_z = 0`` sector at half filling (``sites`` must be even)."""
    if sites % 2:
        raise ValueError("half filling with S_z = 0 needs an even number of sites")
    return BasisSector(sites, sites // 2, sites // 2)


def sector_size(sites: int, n_up: int, n_down: int) -> int:
    return comb(sites, n_up) * comb(sites, n_down)
