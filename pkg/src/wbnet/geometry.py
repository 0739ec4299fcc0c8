"""Quad-tree bookkeeping: Morton (Z-order) flattening and butterfly index maps.

Morton convention used throughout the package: for a cell at (row i, col j)
the column bit occupies the less significant position of each interleaved
pair, so the four children of a parent are ordered (0,0), (0,1), (1,0), (1,1).
Pixels inside a leaf are stored row-major.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    """Complete quad-tree with ``L`` levels and leaf size ``s``."""

    L: int
    s: int

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 2 or self.L % 2:
            raise ValueError(f"L must be an even integer >= 2, got {self.L}")
        if int(self.s) != self.s or self.s < 1:
            raise ValueError(f"leaf size s must be a positive integer, got {self.s}")

    @property
    def n(self) -> int:
        return (2**self.L) * self.s

    @property
    def mid(self) -> int:
        return self.L // 2

    def levels(self) -> range:
        """Levels L/2 .. L inclusive."""
        return range(self.mid, self.L + 1)


@dataclass
class MortonTensor:
    """Morton-flattened multi-channel field: ``data[k, c]`` is channel c of cell k."""

    level: int
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2 or self.data.shape[0] != 4**self.level:
            raise ValueError(
                f"level {self.level} needs data of shape [{4**self.level}, c], "
                f"got {self.data.shape}"
            )

    @property
    def channels(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class PermIndex:
    indices: np.ndarray = field(repr=False)
    level: int | None = None

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        object.__setattr__(self, "indices", idx)
        if idx.ndim != 1 or not np.array_equal(np.sort(idx), np.arange(idx.size)):
            raise ValueError("indices must be a permutation of 0..m-1")

    def __len__(self):
        return self.indices.size

    def inverse(self) -> PermIndex:
        inv = np.empty_like(self.indices)
        inv[self.indices] = np.arange(self.indices.size)
        return PermIndex(inv, self.level)


def compose(first: PermIndex, second: PermIndex) -> PermIndex:
    """Permutation equal to applying ``first`` then ``second``."""
    if len(first) != len(second):
        raise ValueError("cannot compose permutations of different lengths")
    return PermIndex(first.indices[second.indices], second.level)


def _check_cell(i, j, level):
    side = 2**level
    i = np.asarray(i)
    j = np.asarray(j)
    if np.any((i < 0) | (i >= side) | (j < 0) | (j >= side)):
        raise ValueError(f"cell coordinates must lie in [0, {side}) at level {level}")
    return i.astype(np.int64), j.astype(np.int64)


def morton_index(i, j, level: int):
    """Z-order index of cell (i, j) at ``level``. Works elementwise on arrays."""
    i, j = _check_cell(i, j, level)
    k = np.zeros(np.broadcast(i, j).shape, dtype=np.int64)
    for b in range(level):
        k |= ((i >> b) & 1) << (2 * b + 1)
        k |= ((j >> b) & 1) << (2 * b)
    return int(k) if k.ndim == 0 else k


def morton_coords(k, level: int):
    """Inverse of :func:`morton_index`; returns ``(i, j)``."""
    k = np.asarray(k, dtype=np.int64)
    if np.any((k < 0) | (k >= 4**level)):
        raise ValueError(f"Morton index must lie in [0, {4**level}) at level {level}")
    i = np.zeros_like(k)
    j = np.zeros_like(k)
    for b in range(level):
        i |= ((k >> (2 * b + 1)) & 1) << b
        j |= ((k >> (2 * b)) & 1) << b
    if k.ndim == 0:
        return int(i), int(j)
    return i, j


@lru_cache(maxsize=None)
def _morton_order(level: int) -> np.ndarray:
    # row-major cell id of the cell holding Morton position k
    i, j = morton_coords(np.arange(4**level), level)
    order = i * (2**level) + j
    order.setflags(write=False)
    return order


def block_flatten(x: np.ndarray, level: int, leaf: int) -> np.ndarray:
    """Tile ``(..., n, n, C)`` into Morton-ordered blocks: ``(..., 4**level, leaf*leaf*C)``.

    Inside a block the values are ordered (pixel row, pixel col, channel).
    """
    x = np.asarray(x)
    side = 2**level
    n = side * leaf
    if x.ndim < 3 or x.shape[-3] != n or x.shape[-2] != n:
        raise ValueError(f"expected trailing shape ({n}, {n}, C), got {x.shape}")
    lead, c = x.shape[:-3], x.shape[-1]
    nl = len(lead)
    t = x.reshape(*lead, side, leaf, side, leaf, c)
    axes = tuple(range(nl)) + tuple(nl + a for a in (0, 2, 1, 3, 4))
    t = t.transpose(axes).reshape(*lead, side * side, leaf * leaf * c)
    return t[..., _morton_order(level), :]


def block_unflatten(t: np.ndarray, level: int, leaf: int, channels: int = 1) -> np.ndarray:
    """Exact inverse of :func:`block_flatten`."""
    t = np.asarray(t)
    side = 2**level
    if t.ndim < 2 or t.shape[-2] != side * side or t.shape[-1] != leaf * leaf * channels:
        raise ValueError(
            f"expected trailing shape ({side * side}, {leaf * leaf * channels}), got {t.shape}"
        )
    lead = t.shape[:-2]
    nl = len(lead)
    inv = np.empty(side * side, dtype=np.int64)
    inv[_morton_order(level)] = np.arange(side * side)
    rm = t[..., inv, :].reshape(*lead, side, side, leaf, leaf, channels)
    axes = tuple(range(nl)) + tuple(nl + a for a in (0, 2, 1, 3, 4))
    return rm.transpose(axes).reshape(*lead, side * leaf, side * leaf, channels)


def morton_flatten(image: np.ndarray, spec: GridSpec) -> MortonTensor:
    """n x n image -> MortonTensor at level L with s**2 channels."""
    image = np.asarray(image)
    if image.shape != (spec.n, spec.n):
        raise ValueError(f"image must be {spec.n}x{spec.n} for {spec}, got {image.shape}")
    return MortonTensor(spec.L, block_flatten(image[..., None], spec.L, spec.s))


def morton_unflatten(t: MortonTensor, spec: GridSpec) -> np.ndarray:
    if t.level != spec.L or t.channels != spec.s**2:
        raise ValueError(
            f"need level {spec.L} with {spec.s**2} channels, got level {t.level} "
            f"with {t.channels}"
        )
    return block_unflatten(t.data, spec.L, spec.s)[..., 0]


def perm_indices(spec: GridSpec, level: int, block_rank: int) -> PermIndex:
    """Sibling-gathering permutation for the H/G layer at ``level``.

    The input is the trunk at level ``level+1``: ``4**(level+1)`` cells, each
    holding ``4**(L-level-1)`` channel blocks of ``block_rank`` entries. After
    gathering, for every parent cell p and block t the four children's copies
    of block t are contiguous, i.e. the flat order is (p, t, child, entry).
    """
    if not spec.mid <= level < spec.L:
        raise ValueError(f"level must lie in [{spec.mid}, {spec.L}), got {level}")
    if block_rank < 1:
        raise ValueError("block_rank must be positive")
    nblk = 4 ** (spec.L - level - 1)
    p, t, c, e = np.meshgrid(
        np.arange(4**level), np.arange(nblk), np.arange(4), np.arange(block_rank),
        indexing="ij",
    )
    src = ((4 * p + c) * nblk + t) * block_rank + e
    return PermIndex(src.ravel(), level)


def switch_indices(spec: GridSpec, rho: int, size: int | None = None) -> PermIndex:
    """Patch/block transposition at the middle level.

    The flat input is read as ``[P patches, P blocks, rho]`` with ``P = 4**(L/2)``
    and ``out[p, q, :] = in[q, p, :]``.
    """
    npatch = 4**spec.mid
    expected = npatch * npatch * rho
    if rho < 1 or (size is not None and size != expected):
        raise ValueError(f"switch expects {expected} entries (rho={rho}), got {size}")
    idx = np.arange(expected).reshape(npatch, npatch, rho).transpose(1, 0, 2)
    return PermIndex(idx.ravel(), spec.mid)


def apply_permutation(x: np.ndarray, perm: PermIndex, axis: int = -1) -> np.ndarray:
    """``out[t] = x[perm.indices[t]]`` along ``axis``."""
    x = np.asarray(x)
    if x.shape[axis] != len(perm):
        raise ValueError(f"length {x.shape[axis]} does not match permutation of {len(perm)}")
    return np.take(x, perm.indices, axis=axis)
