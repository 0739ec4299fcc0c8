import numpy as np
import pytest
from scipy import ndimage

from wbnet.imaging_baseline import farfield_matrix, multifreq_image, tikhonov_image
from wbnet.wavesim import (
    AcquisitionGeometry,
    HelmholtzSolver,
    Medium,
    PmlSpec,
    Scatterer,
    planewave_sources,
    rasterize_scatterer,
    sample_receivers,
)


def main_lobe(img):
    """Pixel count of the half-maximum region connected to the peak."""
    a = np.abs(img)
    labels, _ = ndimage.label(a >= 0.5 * a.max())
    return int((labels == labels[np.unravel_index(a.argmax(), a.shape)]).sum())


def test_adjoint_identity():
    rng = np.random.default_rng(0)
    geom = AcquisitionGeometry(n_src=12, n_rcv=10)
    op = farfield_matrix(2 * np.pi * 5, 16, geom)
    x = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
    y = rng.standard_normal((12, 10)) + 1j * rng.standard_normal((12, 10))
    lhs = np.vdot(y, op.apply(x))
    rhs = np.vdot(op.adjoint(y), x)
    assert abs(lhs - rhs) / abs(lhs) < 1e-10


def test_dense_matrix_matches_factored_form():
    geom = AcquisitionGeometry(n_src=6, n_rcv=5)
    op = farfield_matrix(2 * np.pi * 3, 8, geom)
    M = op.matrix()
    assert M.shape == (30, 64)
    x = np.random.default_rng(1).standard_normal(64)
    assert np.allclose(M @ x, op.apply(x).ravel())
    # direct entry evaluation for one (s, r, y)
    s, r = geom.source_directions()[2], geom.receiver_directions()[4]
    h = 1 / 8
    y = np.array([-0.5 + 3.5 * h, -0.5 + 6.5 * h])  # column 3, row 6
    w = 2 * np.pi * 3
    entry = -(w**2) * np.exp(1j * w * 0.5) / np.sqrt(0.5) * np.exp(1j * w * (s - r) @ y) * h**2
    assert M[2 * 5 + 4, 6 * 8 + 3] == pytest.approx(entry)
    with pytest.raises(MemoryError):
        op.matrix(cap=100)


def test_point_mass_magnitude_depends_on_angle_difference_only():
    op = farfield_matrix(2 * np.pi * 5, 16, AcquisitionGeometry(n_src=16, n_rcv=16))
    eta = np.zeros((16, 16))
    eta[5, 11] = 1.0
    mag = np.abs(op.apply(eta))
    assert np.allclose(mag, mag[0, 0])
    M = op.matrix()
    diag_rows = M[[k * 16 + k for k in range(16)]]
    assert np.allclose(diag_rows, diag_rows[0, 0])


def test_operator_errors():
    with pytest.raises(ValueError):
        farfield_matrix(1.0, 8, AcquisitionGeometry(mode="point-source"))
    with pytest.raises(ValueError):
        farfield_matrix(1.0, 8, normalization="unit")


def test_tikhonov_zero_and_errors():
    op = farfield_matrix(2 * np.pi * 2.5, 16, AcquisitionGeometry(n_src=8, n_rcv=8))
    assert np.all(tikhonov_image(np.zeros((8, 8)), op) == 0)
    with pytest.raises(ValueError):
        tikhonov_image(np.zeros((8, 8)), op, eps=0.0)


def test_tikhonov_normal_equation_residual():
    n = 32
    op = farfield_matrix(2 * np.pi * 5, n, AcquisitionGeometry(n_src=32, n_rcv=32))
    rng = np.random.default_rng(2)
    data = rng.standard_normal((32, 32)) + 1j * rng.standard_normal((32, 32))
    img = tikhonov_image(data, op, 1.0, 1e-3)
    b = op.adjoint(data)
    res = op.normal(img) + img - b
    assert np.linalg.norm(res) <= 1e-3 * np.linalg.norm(b)


def test_point_localisation_and_lobe_sharpening():
    n = 80
    geom = AcquisitionGeometry()
    eta = np.zeros((n, n))
    eta[33, 47] = 1.0
    data, ops, images = {}, {}, {}
    for f in (2.5, 5.0, 10.0):
        ops[f] = farfield_matrix(2 * np.pi * f, n, geom)
        data[f] = ops[f].apply(eta)
        images[f] = tikhonov_image(data[f], ops[f], eps=1.0)
    peak = np.unravel_index(np.abs(images[2.5]).argmax(), (n, n))
    assert max(abs(peak[0] - 33), abs(peak[1] - 47)) <= 1
    combined = multifreq_image(data, ops, eps=1.0)
    assert main_lobe(combined) < main_lobe(images[2.5])
    single = multifreq_image({2.5: data[2.5]}, {2.5: ops[2.5]}, weights={2.5: 1.0})
    assert np.allclose(single, images[2.5])
    zero = multifreq_image(data, ops, weights={f: 0.0 for f in data})
    assert np.all(zero == 0)
    with pytest.raises(ValueError):
        multifreq_image(data, {2.5: ops[2.5]})


def test_born_consistency_with_pde_solver():
    n, f = 80, 2.5
    omega = 2 * np.pi * f
    eta = rasterize_scatterer(Scatterer("gaussian", 2, (0.0, 0.0), 0.0, 1e-3), n)
    geom = AcquisitionGeometry()
    S = HelmholtzSolver(Medium.homogeneous(n, eta), omega, 2, PmlSpec(), f_min=f)
    fields = S.solve(planewave_sources(S, geom.source_directions()))
    pde = sample_receivers(fields, S.grid, geom.receiver_positions())
    pred = farfield_matrix(omega, n, geom, normalization="asymptotic").apply(eta)
    assert np.linalg.norm(pde - pred) / np.linalg.norm(pde) < 0.05
