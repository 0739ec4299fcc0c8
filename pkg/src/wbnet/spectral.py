"""DFT / radix-2 FFT, epsilon-ranks and a 1D two-sided butterfly factorization."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


def naive_dft(x) -> np.ndarray:
    """O(N^2) DFT, ``X[k] = sum_n x[n] exp(-2 pi i n k / N)``, along the last axis."""
    x = np.asarray(x, dtype=complex)
    N = x.shape[-1] if x.ndim else 0
    if N < 1:
        raise ValueError("empty signal")
    nk = np.outer(np.arange(N), np.arange(N)) % N  # reduce phases before exp
    return x @ np.exp(-2j * np.pi * nk / N)  # the DFT matrix is symmetric


def twiddles(N: int) -> np.ndarray:
    return np.exp(-2j * np.pi * np.arange(N // 2) / N)


def merge_even_odd(xe_hat: np.ndarray, xo_hat: np.ndarray) -> np.ndarray:
    """Combine half-length DFTs of the even and odd samples into the full DFT.

    ``X[k] = E[k] + w^k O[k]`` and ``X[k + N/2] = E[k] - w^k O[k]`` with
    ``w = exp(-2 pi i / N)``. Works along the last axis.
    """
    xe_hat = np.asarray(xe_hat)
    xo_hat = np.asarray(xo_hat)
    half = xe_hat.shape[-1]
    t = twiddles(2 * half) * xo_hat
    return np.concatenate([xe_hat + t, xe_hat - t], axis=-1)


def _bit_reverse(N: int) -> np.ndarray:
    bits = N.bit_length() - 1
    idx = np.arange(N)
    rev = np.zeros_like(idx)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft_radix2(x) -> np.ndarray:
    """Iterative decimation-in-time radix-2 FFT."""
    x = np.asarray(x, dtype=complex)
    N = x.shape[0]
    if N < 1 or N & (N - 1):
        raise ValueError(f"length must be a power of two, got {N}")
    y = x[_bit_reverse(N)]
    m = 1
    while m < N:
        blocks = y.reshape(N // (2 * m), 2 * m)
        y = merge_even_odd(blocks[:, :m], blocks[:, m:]).reshape(N)
        m *= 2
    return y


def zero_interleave(x) -> np.ndarray:
    """``[x0, 0, x1, 0, ...]``; its DFT is the input DFT repeated twice."""
    x = np.asarray(x)
    out = np.zeros(2 * x.shape[0], dtype=x.dtype)
    out[::2] = x
    return out


def upscale_repeat(x_hat) -> np.ndarray:
    """Spectrum of a decimated signal extended to the full frequency resolution."""
    x_hat = np.asarray(x_hat)
    return np.concatenate([x_hat, x_hat])


def epsilon_rank(M, eps: float) -> int:
    """Number of singular values above ``eps * sigma_max``."""
    M = np.asarray(M)
    if eps <= 0:
        raise ValueError("eps must be positive")
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.count_nonzero(s > eps * s[0]))


@dataclass
class RankProfile:
    N: int
    levels: int
    eps: float
    # rows of (level p, block_row, block_col, rank); p = number of row halvings
    entries: list[tuple[int, int, int, int]] = field(default_factory=list)

    def ranks(self, p: int) -> np.ndarray:
        """Rank table for level ``p`` as a ``[2**p, 2**(levels-p)]`` array."""
        out = np.zeros((2**p, 2 ** (self.levels - p)), dtype=int)
        for lev, i, j, r in self.entries:
            if lev == p:
                out[i, j] = r
        return out

    def max_rank(self) -> dict[int, int]:
        return {p: int(self.ranks(p).max()) for p in range(self.levels + 1)}

    def min_rank(self) -> dict[int, int]:
        return {p: int(self.ranks(p).min()) for p in range(self.levels + 1)}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "block_row", "block_col", "rank"])
            w.writerows(self.entries)


def complementary_rank_profile(M, levels: int, eps: float) -> RankProfile:
    """epsilon-ranks of every block in the partitions ``2**p x 2**(levels-p)``."""
    M = np.asarray(M)
    N = M.shape[0]
    if M.shape != (N, N):
        raise ValueError("square matrix required")
    if levels < 0 or N % (2**levels):
        raise ValueError(f"N={N} is not divisible by 2**{levels}")
    prof = RankProfile(N, levels, eps)
    for p in range(levels + 1):
        rb, cb = N // 2**p, N // 2 ** (levels - p)
        for i in range(2**p):
            for j in range(2 ** (levels - p)):
                blk = M[i * rb:(i + 1) * rb, j * cb:(j + 1) * cb]
                prof.entries.append((p, i, j, epsilon_rank(blk, eps)))
    return prof


@dataclass
class ButterflyFactors:
    """Sparse factors of ``M ~ U G_{L-1} ... G_{L/2} S H_{L/2} ... H_{L-1} V``.

    ``factors`` lists them in application order (V first, U last), so
    ``M @ x == factors[-1] @ ... @ factors[0] @ x``.
    """

    L: int
    r: int
    V: sp.csr_matrix
    H: list[sp.csr_matrix]
    S: sp.csr_matrix
    G: list[sp.csr_matrix]
    U: sp.csr_matrix

    @property
    def factors(self) -> list[sp.csr_matrix]:
        return [self.V, *self.H, self.S, *self.G, self.U]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.U.shape[0], self.V.shape[1])

    def nnz(self) -> int:
        return sum(f.nnz for f in self.factors)

    def to_dense(self) -> np.ndarray:
        return butterfly_apply(self, np.eye(self.shape[1], dtype=complex))


def _svd_basis(blk, k, side):
    u, s, vh = np.linalg.svd(blk, full_matrices=False)
    k = min(k, s.size)
    if side == "left":
        return u[:, :k]
    return vh[:k].conj().T


def _block_sparse(blocks, row_off, col_off, shape):
    rows, cols, vals = [], [], []
    for (ro, co), b in zip(zip(row_off, col_off), blocks):
        if b.size == 0:
            continue
        ii, jj = np.indices(b.shape)
        rows.append((ii + ro).ravel())
        cols.append((jj + co).ravel())
        vals.append(b.ravel())
    if not rows:
        return sp.csr_matrix(shape, dtype=complex)
    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape
    ).tocsr()


def butterfly_factorize(M, L: int, r: int) -> ButterflyFactors:
    """Two-sided 1D butterfly factorization by truncated SVDs of dyadic blocks.

    Row and column index sets are split into complete binary trees of depth L
    (leaves of size ``s = N / 2**L``). Column-side stage t holds, for every
    row node i at depth t and column node j at depth L-t, the rank-r right
    singular basis of block (i, j); row-side stage b mirrors this with left
    singular bases. Stage transitions are r x r projections between nested
    bases; the middle level carries the singular values.
    """
    M = np.asarray(M, dtype=complex)
    N = M.shape[0]
    if M.shape != (N, N):
        raise ValueError("square matrix required")
    if L < 2 or L % 2:
        raise ValueError("L must be an even integer >= 2")
    if N % (2**L):
        raise ValueError(f"N={N} is not divisible by 2**L={2**L}")
    if r < 1:
        raise ValueError("rank r must be >= 1")
    K = L // 2

    def rows(level, i):
        w = N >> level
        return slice(i * w, (i + 1) * w)

    # column side: Vb[t][(i, j)] is (|cols j| x k) orthonormal
    Vb = [dict() for _ in range(K + 1)]
    Ub = [dict() for _ in range(K + 1)]
    Sig = {}
    for i in range(2**K):
        for j in range(2**K):
            u, s, vh = np.linalg.svd(M[rows(K, i), rows(K, j)], full_matrices=False)
            k = min(r, s.size)
            Ub[K][(i, j)] = u[:, :k]
            Vb[K][(i, j)] = vh[:k].conj().T
            Sig[(i, j)] = s[:k]
    for t in range(K):
        for i in range(2**t):
            for j in range(2 ** (L - t)):
                Vb[t][(i, j)] = _svd_basis(M[rows(t, i), rows(L - t, j)], r, "right")
    for b in range(K):
        for i in range(2 ** (L - b)):
            for j in range(2**b):
                Ub[b][(i, j)] = _svd_basis(M[rows(L - b, i), rows(b, j)], r, "left")

    # column-side vectors ordered column-node major, row-side row-node major
    def col_order(t):
        return [(i, j) for j in range(2 ** (L - t)) for i in range(2**t)]

    def row_order(b):
        return [(i, j) for i in range(2 ** (L - b)) for j in range(2**b)]

    def offsets(order, basis):
        off, pos = {}, 0
        for key in order:
            off[key] = pos
            pos += basis[key].shape[1]
        return off, pos

    s_leaf = N >> L
    # V: leaves of the column tree against the whole row set
    off0, len0 = offsets(col_order(0), Vb[0])
    blocks, ro, co = [], [], []
    for (i, j) in col_order(0):
        blocks.append(Vb[0][(i, j)].conj().T)
        ro.append(off0[(i, j)])
        co.append(j * s_leaf)
    V = _block_sparse(blocks, ro, co, (len0, N))

    H = []
    prev_off, prev_len = off0, len0
    for t in range(K):
        off, length = offsets(col_order(t + 1), Vb[t + 1])
        blocks, ro, co = [], [], []
        for (i, j) in col_order(t + 1):
            basis = Vb[t + 1][(i, j)]
            half = basis.shape[0] // 2
            for c in range(2):
                child = (i // 2, 2 * j + c)
                W = basis[c * half:(c + 1) * half].conj().T @ Vb[t][child]
                blocks.append(W)
                ro.append(off[(i, j)])
                co.append(prev_off[child])
        H.append(_block_sparse(blocks, ro, co, (length, prev_len)))
        prev_off, prev_len = off, length

    roff, rlen = offsets(row_order(K), Ub[K])
    srows, scols, svals = [], [], []
    for key in row_order(K):
        k = Sig[key].size
        srows.append(roff[key] + np.arange(k))
        scols.append(prev_off[key] + np.arange(k))
        svals.append(Sig[key].astype(complex))
    S = sp.coo_matrix(
        (np.concatenate(svals), (np.concatenate(srows), np.concatenate(scols))),
        shape=(rlen, prev_len),
    ).tocsr()

    G = []
    prev_off, prev_len = roff, rlen
    for b in range(K - 1, -1, -1):
        off, length = offsets(row_order(b), Ub[b])
        blocks, ro, co = [], [], []
        for (i, j) in row_order(b + 1):
            basis = Ub[b + 1][(i, j)]
            half = basis.shape[0] // 2
            for c in range(2):
                child = (2 * i + c, j // 2)
                T = Ub[b][child].conj().T @ basis[c * half:(c + 1) * half]
                blocks.append(T)
                ro.append(off[child])
                co.append(prev_off[(i, j)])
        G.append(_block_sparse(blocks, ro, co, (length, prev_len)))
        prev_off, prev_len = off, length

    blocks, ro, co = [], [], []
    for (i, j) in row_order(0):
        blocks.append(Ub[0][(i, j)])
        ro.append(i * s_leaf)
        co.append(prev_off[(i, j)])
    U = _block_sparse(blocks, ro, co, (N, prev_len))
    return ButterflyFactors(L, r, V, H, S, G, U)


def butterfly_apply(F: ButterflyFactors, x, counter: Counter | None = None) -> np.ndarray:
    """Apply the factorization to a vector (or the columns of a matrix).

    ``counter["mults"]`` accumulates complex multiply-adds when given.
    """
    x = np.asarray(x, dtype=complex)
    if x.shape[0] != F.shape[1]:
        raise ValueError(f"expected leading dimension {F.shape[1]}, got {x.shape[0]}")
    cols = 1 if x.ndim == 1 else x.shape[1]
    y = x
    for f in F.factors:
        y = f @ y
        if counter is not None:
            counter["mults"] += f.nnz * cols
    return y
