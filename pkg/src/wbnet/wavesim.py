"""2D Helmholtz forward modelling: FD operators with PML, scattered fields,
receiver sampling, scatterer rasterization and sample synthesis.

Conventions: physical points are ``(x, z)``; grid arrays are indexed
``[i, j]`` with row ``i`` along ``z`` and column ``j`` along ``x``. Nodes are
cell centred, so the n x n interior grid on ``[a, b]^2`` has nodes
``a + (j + 1/2) h``. The wave speed is 1 when ``m0 == 1`` and frequencies
are given as angular frequencies ``omega = 2 pi f`` unless noted otherwise.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import hankel1

from .geometry import GridSpec


class SolverError(RuntimeError):
    def __init__(self, msg, residual=None):
        super().__init__(msg if residual is None else f"{msg} (residual {residual:.3e})")
        self.residual = residual


@dataclass
class Medium:
    m0: np.ndarray
    eta: np.ndarray
    extent: tuple = (-0.5, 0.5)

    def __post_init__(self):
        self.m0 = np.asarray(self.m0, dtype=float)
        self.eta = np.asarray(self.eta, dtype=float)
        if self.m0.shape != self.eta.shape or self.m0.ndim != 2 or self.m0.shape[0] != self.m0.shape[1]:
            raise ValueError("m0 and eta must be square grids of equal shape")
        if np.any(self.m0 <= 0):
            raise ValueError("background squared slowness must be positive")

    @classmethod
    def homogeneous(cls, n, eta=None, extent=(-0.5, 0.5)):
        eta = np.zeros((n, n)) if eta is None else eta
        return cls(np.ones((n, n)), eta, extent)

    @property
    def n(self) -> int:
        return self.m0.shape[0]

    @property
    def h(self) -> float:
        return (self.extent[1] - self.extent[0]) / self.n

    def nodes(self) -> np.ndarray:
        return self.extent[0] + (np.arange(self.n) + 0.5) * self.h


@dataclass(frozen=True)
class PmlSpec:
    """``width`` in cells (None: one wavelength at the lowest frequency)."""

    width: int | None = None
    intensity: float = 80.0
    profile: float = 2.0

    def resolve(self, h, f_min, c_max=1.0) -> int:
        if self.width is not None:
            return int(self.width)
        return int(math.ceil(c_max / (f_min * h) - 1e-9))


@dataclass(frozen=True)
class PaddedGrid:
    """Interior grid plus ``width`` PML cells on each side."""

    n: int
    width: int
    h: float
    extent: tuple

    @property
    def size(self) -> int:
        return self.n + 2 * self.width

    def nodes(self) -> np.ndarray:
        return self.extent[0] + (np.arange(self.size) - self.width + 0.5) * self.h

    def interior(self, a):
        w = self.width
        return a[..., w : w + self.n, w : w + self.n]


@dataclass(frozen=True)
class AcquisitionGeometry:
    n_src: int = 80
    n_rcv: int = 80
    R_rcv: float = 0.5
    R_src: float = 1.0
    mode: str = "plane-wave"

    def __post_init__(self):
        if self.mode not in ("plane-wave", "point-source"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @staticmethod
    def _circle(count):
        t = 2 * np.pi * np.arange(count) / count
        return np.stack([np.cos(t), np.sin(t)], axis=1)

    def source_directions(self) -> np.ndarray:
        return self._circle(self.n_src)

    def receiver_directions(self) -> np.ndarray:
        return self._circle(self.n_rcv)

    def receiver_positions(self) -> np.ndarray:
        return self.R_rcv * self._circle(self.n_rcv)

    def source_positions(self) -> np.ndarray:
        return self.R_src * self._circle(self.n_src)


def _stretch(nodes, lo, hi, width_phys, pml: PmlSpec, omega):
    d = np.maximum(0.0, np.maximum(lo - nodes, nodes - hi))
    if omega == 0 or width_phys == 0:
        return np.ones_like(nodes, dtype=complex), np.zeros_like(nodes, dtype=complex)
    sigma = pml.intensity * (d / width_phys) ** pml.profile
    dsigma = pml.intensity * pml.profile * d ** (pml.profile - 1) / width_phys**pml.profile
    dsigma *= np.where(nodes < lo, -1.0, 1.0)
    return 1 + 1j * sigma / omega, 1j * dsigma / omega


def _padded_slowness(med: Medium, w):
    m = np.pad(med.m0, w, mode="edge")
    m[w : w + med.n, w : w + med.n] += med.eta
    return m


def build_helmholtz_system(med: Medium, omega: float, order: int = 2, pml: PmlSpec | None = None, f_min=None):
    """Assemble ``s_x s_z (Delta_stretched + omega^2 m)`` on the padded grid.

    Returns ``(A, grid, weight)``: the CSC matrix, the padded grid and the
    ``s_x s_z`` factor that right-hand sides must be multiplied by.

    ``order=2`` discretizes the symmetric form
    ``d_x((s_z/s_x) d_x) + d_z((s_x/s_z) d_z) + omega^2 m s_x s_z`` with the
    5-point stencil, so the matrix is complex symmetric. ``order=4`` uses
    fourth-order central differences on the expanded form
    ``(1/s) d(u'/s) = u''/s^2 - s' u'/s^3`` along each axis. The layer ends
    in a homogeneous Dirichlet condition.
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    pml = pml or PmlSpec()
    h = med.h
    f_min = f_min if f_min is not None else max(omega, 1e-12) / (2 * np.pi)
    w = pml.resolve(h, f_min, float(np.sqrt(1 / med.m0.min())))
    grid = PaddedGrid(med.n, w, h, tuple(med.extent))
    N = grid.size
    m = _padded_slowness(med, w)
    if np.any(m <= 0):
        raise ValueError("squared slowness must stay positive")
    if omega > 0:
        ppw = 2 * np.pi / (omega * np.sqrt(m.max()) * h)
        if ppw < 4:
            warnings.warn(f"under-resolved grid: {ppw:.2f} points per wavelength", stacklevel=2)

    x = grid.nodes()
    lo, hi = med.extent
    s, ds = _stretch(x, lo, hi, w * h, pml, omega)
    idx = np.arange(N * N).reshape(N, N)
    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(np.broadcast_to(v, r.shape).ravel())

    sz = s[:, None]  # varies with row i
    sx = s[None, :]  # varies with column j
    weight = sz * sx
    diag = omega**2 * m * weight

    if order == 2:
        shalf, _ = _stretch(x[:-1] + h / 2, lo, hi, w * h, pml, omega)
        # coefficients on x-edges (j, j+1) and z-edges (i, i+1)
        cx = sz / shalf[None, :] / h**2  # (N, N-1)
        cz = sx / shalf[:, None] / h**2  # (N-1, N)
        # Dirichlet ghost edges use the end-node stretch
        cx_lo = (sz / s[0]) / h**2 * np.ones((N, 1))
        cx_hi = (sz / s[-1]) / h**2 * np.ones((N, 1))
        cz_lo = (sx / s[0]) / h**2 * np.ones((1, N))
        cz_hi = (sx / s[-1]) / h**2 * np.ones((1, N))
        ex = np.concatenate([cx_lo, cx, cx_hi], axis=1)  # (N, N+1)
        ez = np.concatenate([cz_lo, cz, cz_hi], axis=0)  # (N+1, N)
        diag = diag - ex[:, :-1] - ex[:, 1:] - ez[:-1, :] - ez[1:, :]
        add(idx[:, :-1], idx[:, 1:], cx)
        add(idx[:, 1:], idx[:, :-1], cx)
        add(idx[:-1, :], idx[1:, :], cz)
        add(idx[1:, :], idx[:-1, :], cz)
        add(idx, idx, diag)
    else:
        d2 = np.array([-1, 16, -30, 16, -1]) / (12 * h**2)
        d1 = np.array([1, -8, 0, 8, -1]) / (12 * h)
        # per-axis coefficients of u'' and u' after multiplying by s_x s_z
        a_x = sz / sx  # from s_z s_x / s_x^2
        b_x = -sz * ds[None, :] / sx**2
        a_z = sx / sz
        b_z = -sx * ds[:, None] / sz**2
        for k, off in enumerate(range(-2, 3)):
            cx = np.broadcast_to(a_x * d2[k] + b_x * d1[k], (N, N))
            cz = np.broadcast_to(a_z * d2[k] + b_z * d1[k], (N, N))
            if off == 0:
                diag = diag + cx + cz
                continue
            jj = slice(max(0, -off), N - max(0, off))
            jn = slice(max(0, off), N - max(0, -off))
            add(idx[:, jj], idx[:, jn], cx[:, jj])
            add(idx[jj, :], idx[jn, :], cz[jj, :])
        add(idx, idx, diag)

    A = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N * N, N * N)
    )
    return A, grid, weight


class HelmholtzSolver:
    """Factorized operator at one frequency, reused across right-hand sides."""

    def __init__(self, med: Medium, omega: float, order: int = 2, pml: PmlSpec | None = None, f_min=None):
        self.med = med
        self.omega = omega
        self.A, self.grid, self.weight = build_helmholtz_system(med, omega, order, pml, f_min)
        self._lu = spla.splu(self.A, permc_spec="COLAMD")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve for source grids ``rhs`` of shape (N, N) or (k, N, N)."""
        N = self.grid.size
        single = rhs.ndim == 2
        b = (rhs.reshape(-1, N * N) * self.weight.reshape(1, -1)).T
        u = self._lu.solve(np.ascontiguousarray(b))
        res = np.linalg.norm(self.A @ u - b) / max(np.linalg.norm(b), 1e-300)
        if not np.all(np.isfinite(u)) or res > 1e-8:
            raise SolverError("sparse solve failed", res)
        u = u.T.reshape(-1, N, N)
        return u[0] if single else u


def _plane_waves(grid: PaddedGrid, omega, directions):
    x = grid.nodes()
    d = np.atleast_2d(directions)
    # phase = omega (d_x x + d_z z) on the [i=z, j=x] grid
    return np.exp(1j * omega * (d[:, 0, None, None] * x[None, None, :] + d[:, 1, None, None] * x[None, :, None]))


def planewave_sources(solver: HelmholtzSolver, directions) -> np.ndarray:
    g = solver.grid
    eta = np.zeros((g.size, g.size))
    g.interior(eta)[...] = solver.med.eta
    return -(solver.omega**2) * eta[None] * _plane_waves(g, solver.omega, directions)


def solve_scattered_planewave(med: Medium, omega: float, s, order: int = 2, pml: PmlSpec | None = None, solver=None):
    """Scattered field for incident ``exp(i omega s.x)``; returns (field, grid)."""
    s = np.asarray(s, dtype=float)
    norms = np.linalg.norm(np.atleast_2d(s), axis=1)
    if not np.allclose(norms, 1.0, atol=1e-12):
        raise ValueError("directions must be unit vectors")
    solver = solver or HelmholtzSolver(med, omega, order, pml)
    u = solver.solve(planewave_sources(solver, s))
    return (u[0] if s.ndim == 1 else u), solver.grid


def _delta(grid: PaddedGrid, position):
    x = grid.nodes()
    j = int(np.argmin(np.abs(x - position[0])))
    i = int(np.argmin(np.abs(x - position[1])))
    if abs(x[j] - position[0]) > grid.h or abs(x[i] - position[1]) > grid.h:
        raise ValueError(f"source {tuple(position)} lies outside the padded grid")
    rhs = np.zeros((grid.size, grid.size), dtype=complex)
    rhs[i, j] = -1.0 / grid.h**2
    return rhs


def solve_total_pointsource(med: Medium, omega: float, src_position, order: int = 2, pml=None, solver=None):
    """Total field of ``(Delta + omega^2 m) u = -delta_y``; approximates i/4 H0."""
    solver = solver or HelmholtzSolver(med, omega, order, pml)
    return solver.solve(_delta(solver.grid, src_position)), solver.grid


def solve_scattered_pointsource(med: Medium, omega: float, src_position, order: int = 2, pml=None):
    background = Medium(med.m0, np.zeros_like(med.eta), med.extent)
    full, grid = solve_total_pointsource(med, omega, src_position, order, pml)
    if not np.any(med.eta):
        return np.zeros_like(full), grid
    base, _ = solve_total_pointsource(background, omega, src_position, order, pml)
    return full - base, grid


def analytic_greens(omega: float, x, y):
    """Radiating 2D Helmholtz Green's function ``i/4 H0^(1)(omega |x - y|)``."""
    r = np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float), axis=-1)
    if np.any(r == 0):
        raise ValueError("Green's function is singular at x == y")
    return 0.25j * hankel1(0, omega * r)


def sample_receivers(field: np.ndarray, grid: PaddedGrid, points) -> np.ndarray:
    """Bilinear interpolation of ``field`` (..., N, N) at physical ``points`` (k, 2)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    x = grid.nodes()
    fx = (pts[:, 0] - x[0]) / grid.h
    fz = (pts[:, 1] - x[0]) / grid.h
    top = grid.size - 1
    if np.any((fx < 0) | (fz < 0) | (fx > top) | (fz > top)):
        raise ValueError("receiver outside the grid")
    j0 = np.minimum(np.floor(fx).astype(int), top - 1)
    i0 = np.minimum(np.floor(fz).astype(int), top - 1)
    tx, tz = fx - j0, fz - i0
    f = field
    return (
        (1 - tz) * (1 - tx) * f[..., i0, j0]
        + (1 - tz) * tx * f[..., i0, j0 + 1]
        + tz * (1 - tx) * f[..., i0 + 1, j0]
        + tz * tx * f[..., i0 + 1, j0 + 1]
    )


# --- scatterers -----------------------------------------------------------


@dataclass(frozen=True)
class Scatterer:
    kind: str  # square | triangle | gaussian
    char_length: float  # pixels
    position: tuple  # physical (x, z)
    rotation: float = 0.0
    amplitude: float = 0.2

    def to_dict(self):
        return {
            "kind": self.kind,
            "char_length": float(self.char_length),
            "position": [float(v) for v in self.position],
            "rotation": float(self.rotation),
            "amplitude": float(self.amplitude),
        }


def _pixel_centres(n, extent):
    h = (extent[1] - extent[0]) / n
    c = extent[0] + (np.arange(n) + 0.5) * h
    Z, X = np.meshgrid(c, c, indexing="ij")
    return X, Z, h


def rasterize_scatterer(sc: Scatterer, n: int, extent=(-0.5, 0.5)) -> np.ndarray:
    """eta contribution of one scatterer, sampled at pixel centres."""
    X, Z, h = _pixel_centres(n, extent)
    dx, dz = X - sc.position[0], Z - sc.position[1]
    if sc.kind == "gaussian":
        sigma = sc.char_length * h
        return sc.amplitude * np.exp(-(dx**2 + dz**2) / (2 * sigma**2))
    c, s = np.cos(sc.rotation), np.sin(sc.rotation)
    # coordinates in the shape frame (undo the rotation)
    u = c * dx + s * dz
    v = -s * dx + c * dz
    a = sc.char_length * h
    if sc.kind == "square":
        inside = (np.abs(u) <= a / 2) & (np.abs(v) <= a / 2)
    elif sc.kind == "triangle":
        # equilateral, base of length a parallel to x at v = +H/3, apex at v = -2H/3
        H = a * np.sqrt(3) / 2
        frac = (H / 3 - v) / H  # 0 at the base, 1 at the apex
        inside = (frac >= 0) & (frac <= 1) & (np.abs(u) <= (a / 2) * (1 - frac))
    else:
        raise ValueError(f"unknown scatterer kind {sc.kind!r}")
    return sc.amplitude * inside.astype(float)


def draw_scatterers(scatterers, n: int, extent=(-0.5, 0.5)) -> np.ndarray:
    eta = np.zeros((n, n))
    for sc in scatterers:
        eta += rasterize_scatterer(sc, n, extent)
    return eta


def assign_bands(frequencies, spec: GridSpec) -> dict:
    """Octave bands anchored at the highest frequency.

    Level L receives ``(f_max/2, f_max]``, level L-1 ``(f_max/4, f_max/2]``
    and so on down to L/2; anything lower is folded into L/2 with a warning.
    """
    f = np.asarray(frequencies, dtype=float)
    if f.size == 0 or np.any(f <= 0):
        raise ValueError("frequencies must be positive")
    if np.any(np.diff(f) < 0):
        raise ValueError("frequencies must be sorted")
    bands = {lvl: [] for lvl in spec.levels()}
    fmax = f.max()
    for fi in f.tolist():
        level = spec.L - int(math.floor(math.log2(fmax / fi) + 1e-9))
        if level < spec.mid:
            warnings.warn(f"frequency {fi} lies below the lowest band; assigned to level {spec.mid}", stacklevel=2)
            level = spec.mid
        bands[level].append(fi)
    return bands


# --- sample synthesis -----------------------------------------------------


@dataclass
class SimConfig:
    L: int = 4
    s: int = 5
    extent: tuple = (-0.5, 0.5)
    frequencies: list = field(default_factory=lambda: [2.5, 5.0, 10.0])  # Hz
    n_src: int = 80
    n_rcv: int = 80
    R_rcv: float = 0.5
    shapes: list = field(default_factory=lambda: [{"kind": "gaussian", "char_lengths": [1, 2, 3]}])
    amplitude: float = 0.2
    counts: list = field(default_factory=lambda: [2, 3, 4])
    placement_radius: float = 0.35
    fd_order: int = 2
    pml_width: int | None = None
    pml_intensity: float = 80.0

    @property
    def spec(self) -> GridSpec:
        return GridSpec(self.L, self.s)

    @property
    def geometry(self) -> AcquisitionGeometry:
        return AcquisitionGeometry(self.n_src, self.n_rcv, self.R_rcv)

    @property
    def pml(self) -> PmlSpec:
        return PmlSpec(self.pml_width, self.pml_intensity)

    def to_dict(self):
        d = dict(self.__dict__)
        d["extent"] = list(self.extent)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if "extent" in known:
            known["extent"] = tuple(known["extent"])
        return cls(**known)


@dataclass
class ScatterSample:
    eta: np.ndarray
    bands: dict  # level -> complex [n_src, n_rcv, n_freq]
    band_freqs: dict
    scatterers: list
    seed: tuple


def draw_sample_scatterers(rng: np.random.Generator, cfg: SimConfig) -> list:
    count = int(rng.choice(cfg.counts))
    out = []
    for _ in range(count):
        shape = cfg.shapes[int(rng.integers(len(cfg.shapes)))]
        size = float(rng.choice(shape["char_lengths"]))
        rad = cfg.placement_radius * np.sqrt(rng.random())
        ang = 2 * np.pi * rng.random()
        rot = 2 * np.pi * rng.random() if shape["kind"] != "gaussian" else 0.0
        pos = (rad * np.cos(ang), rad * np.sin(ang))
        out.append(Scatterer(shape["kind"], size, pos, rot, cfg.amplitude))
    return out


def simulate_data(eta: np.ndarray, cfg: SimConfig, fd_order=None) -> dict:
    """Receiver data {freq: complex [n_src, n_rcv]} for every probe frequency."""
    order = cfg.fd_order if fd_order is None else fd_order
    med = Medium.homogeneous(cfg.spec.n, eta, cfg.extent)
    geom = cfg.geometry
    f_min = min(cfg.frequencies)
    out = {}
    for f in cfg.frequencies:
        omega = 2 * np.pi * f
        solver = HelmholtzSolver(med, omega, order, cfg.pml, f_min=f_min)
        fields = solver.solve(planewave_sources(solver, geom.source_directions()))
        out[f] = sample_receivers(fields, solver.grid, geom.receiver_positions())
    return out


def generate_sample(seed, cfg: SimConfig, fd_order=None) -> ScatterSample:
    """Draw scatterers from ``SeedSequence(seed)``, simulate and band the data."""
    seed = tuple(int(v) for v in np.atleast_1d(seed))
    rng = np.random.default_rng(np.random.SeedSequence(list(seed)))
    scatterers = draw_sample_scatterers(rng, cfg)
    eta = draw_scatterers(scatterers, cfg.spec.n, cfg.extent)
    data = simulate_data(eta, cfg, fd_order)
    band_freqs = assign_bands(sorted(cfg.frequencies), cfg.spec)
    bands = {}
    for lvl, fs in band_freqs.items():
        if fs:
            bands[lvl] = np.stack([data[f] for f in fs], axis=-1)
        else:
            bands[lvl] = np.zeros((cfg.n_src, cfg.n_rcv, 0), dtype=complex)
    return ScatterSample(eta, bands, band_freqs, scatterers, seed)
