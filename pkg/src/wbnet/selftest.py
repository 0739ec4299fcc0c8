"""Quick oracle suites exposed through ``wbnet selftest``."""

from __future__ import annotations

import numpy as np
from scipy import integrate

from .geometry import GridSpec, compose, morton_coords, morton_index, perm_indices, switch_indices
from .spectral import complementary_rank_profile, fft_radix2, naive_dft
from .training import grad_check
from .wavesim import Medium, analytic_greens, solve_total_pointsource


def suite_fft():
    rng = np.random.default_rng(0)
    worst = 0.0
    for k in range(11):
        x = rng.standard_normal(2**k) + 1j * rng.standard_normal(2**k)
        X = naive_dft(x)
        worst = max(worst, np.max(np.abs(fft_radix2(x) - X)) / np.max(np.abs(X)))
    return worst < 1e-10, f"max relative error {worst:.2e}"


def suite_ranks():
    n = np.arange(256)
    F = np.exp(-2j * np.pi * (np.outer(n, n) % 256) / 256)
    prof = complementary_rank_profile(F, 6, 1e-6)
    hi, lo = prof.max_rank(), prof.min_rank()
    spread = max(hi[k] - lo[k] for k in hi)
    return spread <= 1, f"max ranks per level {hi}, spread {spread}"


def suite_greens():
    z = 1.0
    j0 = integrate.quad(lambda t: np.cos(z * np.sin(t)), 0, np.pi, epsabs=1e-13)[0] / np.pi
    y0 = 4 / np.pi**2 * integrate.quad(
        lambda t: np.cos(z * np.cos(t)) * (np.euler_gamma + np.log(2 * z * np.sin(t) ** 2)),
        0, np.pi / 2, epsabs=1e-13, limit=200,
    )[0]  # fmt: skip
    qerr = abs(analytic_greens(1.0, np.array([1.0, 0.0]), np.zeros(2)) - 0.25j * (j0 + 1j * y0))
    n, h = 80, 1 / 80
    f = 1 / (10 * h)
    src = (h / 2, h / 2)
    u, grid = solve_total_pointsource(Medium.homogeneous(n), 2 * np.pi * f, src, order=4)
    x = grid.nodes()
    Z, X = np.meshgrid(x, x, indexing="ij")
    mask = (np.abs(X) < 0.5 - 2 * h) & (np.abs(Z) < 0.5 - 2 * h) & (np.hypot(X - src[0], Z - src[1]) >= 3 / f)
    G = analytic_greens(2 * np.pi * f, np.stack([X[mask], Z[mask]], 1), np.array(src))
    ferr = np.linalg.norm(u[mask] - G) / np.linalg.norm(G)
    return qerr < 1e-8 and ferr < 0.02, f"quadrature {qerr:.1e}, FD order 4 at 10 PPW {ferr:.3%}"


def suite_grads():
    rep = grad_check(np.random.default_rng(0))
    ok = all(v < 1e-6 for k, v in rep.items() if k != "widebnet") and rep["widebnet"] < 1e-5
    return ok, ", ".join(f"{k} {v:.1e}" for k, v in rep.items())


def suite_perms():
    ok = True
    for level in range(9):
        side = 2**level
        i, j = np.divmod(np.arange(side * side), side)
        k = morton_index(i, j, level)
        ok &= np.array_equal(np.sort(k), np.arange(side * side))
        ii, jj = morton_coords(k, level)
        ok &= np.array_equal(ii, i) and np.array_equal(jj, j)
    for L in (2, 4):
        spec = GridSpec(L, 1)
        for rho in (1, 3):
            sw = switch_indices(spec, rho)
            ok &= np.array_equal(compose(sw, sw).indices, np.arange(len(sw)))
            for lvl in range(spec.mid, L):
                p = perm_indices(spec, lvl, rho)
                ok &= np.array_equal(np.sort(p.indices), np.arange(len(p)))
    return bool(ok), "Morton bijections, switch involutions, perm bijections"


SUITES = {"fft": suite_fft, "ranks": suite_ranks, "greens": suite_greens, "grads": suite_grads, "perms": suite_perms}


def run(suite: str = "all") -> dict:
    names = list(SUITES) if suite == "all" else [suite]
    return {name: SUITES[name]() for name in names}
