"""Linearized far-field imaging: forward operator, Tikhonov back-projection
and the weighted multi-frequency imaging condition."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .wavesim import AcquisitionGeometry

DENSE_CAP = 2**27  # complex entries allowed for an explicit matrix (~2 GiB)


class ConvergenceError(RuntimeError):
    def __init__(self, residual):
        super().__init__(f"Krylov solve did not converge (relative residual {residual:.3e})")
        self.residual = residual


@dataclass
class FarFieldOperator:
    """Linearized map from eta (n x n) to data (n_src x n_rcv) at one frequency.

    Entry ``((s, r), y) = c * exp(i omega (s - r).y) * h^2`` with
    ``c = -omega^2 exp(i omega R) / sqrt(R)``. With ``normalization="asymptotic"``
    ``c`` also carries the Hankel far-field constant ``-exp(i pi/4)/sqrt(8 pi omega)``,
    which makes the prediction directly comparable to scattered fields
    sampled at radius R.
    """

    omega: float
    n: int
    geom: AcquisitionGeometry
    extent: tuple = (-0.5, 0.5)
    normalization: str = "plain"

    def __post_init__(self):
        if self.geom.mode != "plane-wave":
            raise ValueError("far-field operator needs a plane-wave geometry")
        if self.normalization not in ("plain", "asymptotic"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        lo, hi = self.extent
        self.h = (hi - lo) / self.n
        c = lo + (np.arange(self.n) + 0.5) * self.h
        Z, X = np.meshgrid(c, c, indexing="ij")
        y = np.stack([X.ravel(), Z.ravel()], axis=1)
        # E_s[s, y] = exp(i w s.y), E_r[r, y] = exp(i w r.y)
        self._Es = np.exp(1j * self.omega * self.geom.source_directions() @ y.T)
        self._Er = np.exp(1j * self.omega * self.geom.receiver_directions() @ y.T)
        R = self.geom.R_rcv
        coef = -(self.omega**2) * np.exp(1j * self.omega * R) / np.sqrt(R) * self.h**2
        if self.normalization == "asymptotic":
            coef *= -np.exp(1j * np.pi / 4) / np.sqrt(8 * np.pi * self.omega)
        self.coef = coef

    @property
    def shape(self):
        return (self.geom.n_src * self.geom.n_rcv, self.n * self.n)

    def apply(self, eta) -> np.ndarray:
        """Data ``[n_src, n_rcv]`` for eta of shape (n, n) or (n*n,)."""
        e = np.asarray(eta).reshape(-1)
        return self.coef * (self._Es * e) @ self._Er.conj().T

    def adjoint(self, data) -> np.ndarray:
        """Conjugate transpose applied to ``[n_src, n_rcv]`` data; returns (n, n)."""
        d = np.asarray(data).reshape(self.geom.n_src, self.geom.n_rcv)
        # sum_{s,r} conj(coef Es[s,y] conj(Er[r,y])) d[s,r]
        out = np.conj(self.coef) * np.einsum("sy,sr,ry->y", self._Es.conj(), d, self._Er, optimize=True)
        return out.reshape(self.n, self.n)

    def normal(self, eta) -> np.ndarray:
        return self.adjoint(self.apply(eta))

    def matrix(self, cap: int = DENSE_CAP) -> np.ndarray:
        rows, cols = self.shape
        if rows * cols > cap:
            raise MemoryError(f"dense far-field matrix of {rows}x{cols} exceeds cap {cap}")
        M = self._Es[:, None, :] * self._Er.conj()[None, :, :]
        return self.coef * M.reshape(rows, cols)


def farfield_matrix(omega, n, geom=None, extent=(-0.5, 0.5), normalization="plain") -> FarFieldOperator:
    return FarFieldOperator(omega, n, geom or AcquisitionGeometry(), extent, normalization)


def tikhonov_image(data, op: FarFieldOperator, eps: float = 1.0, tol: float = 1e-3, maxiter: int = 500):
    """Solve ``(F*F + eps I) eta = F* data`` by conjugate gradients; returns complex (n, n)."""
    if eps <= 0:
        raise ValueError("regularization must be positive")
    b = op.adjoint(data).ravel()
    nb = np.linalg.norm(b)
    if nb == 0:
        return np.zeros((op.n, op.n), dtype=complex)
    size = op.n * op.n
    A = spla.LinearOperator((size, size), matvec=lambda v: op.normal(v).ravel() + eps * v, dtype=complex)
    x, info = spla.cg(A, b, rtol=tol, atol=0.0, maxiter=maxiter)
    res = np.linalg.norm(A @ x - b) / nb
    if info != 0 or res > tol:
        raise ConvergenceError(res)
    return x.reshape(op.n, op.n)


def multifreq_image(data_by_freq, ops_by_freq, eps: float = 1.0, weights=None, tol: float = 1e-3):
    """Weighted sum of per-frequency Tikhonov images, summed in key order."""
    keys = sorted(data_by_freq)
    if sorted(ops_by_freq) != keys:
        raise ValueError("data and operators cover different frequencies")
    if weights is None:
        weights = {k: 1.0 for k in keys}
    if sorted(weights) != keys or any(w < 0 for w in weights.values()):
        raise ValueError("need one nonnegative weight per frequency")
    n = ops_by_freq[keys[0]].n
    out = np.zeros((n, n), dtype=complex)
    for k in keys:
        if weights[k] == 0:
            continue
        out += weights[k] * tikhonov_image(data_by_freq[k], ops_by_freq[k], eps, tol)
    return out
