import numpy as np
import pytest

from wbnet import tensornet as tn
from wbnet.geometry import MortonTensor, block_flatten, morton_flatten, morton_unflatten, switch_indices
from wbnet.widebnet import (
    WideBNetConfig,
    backward,
    bands_to_input,
    forward,
    init_params,
    param_count,
    param_shapes,
)


def random_inputs(cfg, rng, batch=2):
    n = cfg.spec.n
    return {
        lvl: rng.standard_normal((batch, n, n, 2 * cfg.n_omega(lvl)))
        for lvl in cfg.spec.levels()
        if cfg.n_omega(lvl)
    }


def model_grad_error(cfg, seed=0):
    rng = np.random.default_rng(seed)
    params = init_params(cfg, rng, np.float64)
    for k in params:
        params[k] += 0.1 * rng.standard_normal(params[k].shape)
    X = random_inputs(cfg, rng)
    target = rng.standard_normal((2, cfg.spec.n, cfg.spec.n))

    def loss():
        return 0.5 * np.sum((forward(params, cfg, X) - target) ** 2)

    tape = tn.Tape()
    pred = forward(params, cfg, X, tape)
    grads = backward(params, cfg, tape, pred - target)
    assert set(grads) == set(params)
    worst = 0.0
    for name, a in params.items():
        flat = a.reshape(-1)
        idx = rng.choice(flat.size, min(6, flat.size), replace=False)
        fd = []
        for i in idx:
            old = flat[i]
            eps = 1e-6 * max(1.0, abs(old))
            flat[i] = old + eps
            lp = loss()
            flat[i] = old - eps
            lm = loss()
            flat[i] = old
            fd.append((lp - lm) / (2 * eps))
        an = grads[name].reshape(-1)[idx]
        worst = max(worst, np.linalg.norm(np.array(fd) - an) / np.linalg.norm(an))
    return worst


def test_config_validation():
    with pytest.raises(ValueError):
        WideBNetConfig(L=4, band_sizes=(1, 1))
    with pytest.raises(ValueError):
        WideBNetConfig(L=4, band_sizes=(1, 1, 0))
    with pytest.raises(ValueError):
        WideBNetConfig(L=3, band_sizes=(1, 1))
    with pytest.raises(ValueError):
        WideBNetConfig(r=0)
    with pytest.raises(ValueError):
        WideBNetConfig(cnn_kernel=4)
    cfg = WideBNetConfig(L=4, s=5, r=3, band_sizes=(2, 0, 1))
    assert WideBNetConfig.from_dict(cfg.to_dict()) == cfg


def test_channel_schedule():
    single = WideBNetConfig(L=4, s=5, r=1, band_sizes=(0, 0, 1))
    # one band: 4^(L-l) * r (times 2 for real/imag); r 4^(L/2) per part at the middle
    assert [single.channels(lvl) for lvl in (4, 3, 2)] == [2, 8, 32]
    assert single.channels(2) // 2 == 16
    multi = WideBNetConfig(L=4, s=5, r=2, band_sizes=(1, 1, 1))
    assert [multi.channels(lvl) for lvl in (4, 3, 2)] == [4, 32, 192]
    assert multi.channels(2) % 4**2 == 0


def test_shape_chain_reference_config():
    cfg = WideBNetConfig(L=4, s=5, r=1, band_sizes=(1, 1, 1), n_cnn=1, n_rnn=1)
    rng = np.random.default_rng(0)
    params = init_params(cfg, rng)
    X = {k: v.astype(np.float32) for k, v in random_inputs(cfg, rng, 1).items()}
    tape = tn.Tape()
    out = forward(params, cfg, X, tape)
    assert out.shape == (1, 80, 80)
    kinds = [e[0] for e in tape.entries]
    assert kinds == ["V", "V", "H", "V", "H", "S", "R", "G", "G", "U", "C"]
    assert np.array_equal(out, forward(params, cfg, X))


def test_v_layer_reference_shapes_and_zero_data():
    cfg = WideBNetConfig(L=4, s=5, r=3, band_sizes=(1, 1, 2))
    shapes = param_shapes(cfg)
    assert shapes["V4.W"] == (256, 2 * 3 * 2, 2 * 2 * 25)  # leaf s x s -> r per channel
    assert shapes["V2.W"] == (16, 6, 2 * 400)
    assert shapes["U.W"] == (256, 25, cfg.channels(4))
    params = init_params(cfg, np.random.default_rng(1), np.float64)
    zeros = {lvl: np.zeros((1, 80, 80, 2 * cfg.n_omega(lvl))) for lvl in (2, 3, 4)}
    tape = tn.Tape()
    forward(params, cfg, zeros, tape)
    v_out = [e for e in tape.entries if e[0] == "V"]
    assert all(np.all(c[0] == 0) for _, _, c in v_out)


def test_h_layer_reproduces_constructed_linear_functional():
    # H with explicit weights: output channel 0 = sum of child channel 0 + 2 * injected channel 1
    cfg = WideBNetConfig(L=2, s=1, r=1, band_sizes=(1, 1), n_cnn=0, n_rnn=0)
    rng = np.random.default_rng(2)
    params = init_params(cfg, rng, np.float64)
    c2 = cfg.channels(2)
    W = np.zeros(params["H1.W"].shape)
    per_child = c2 + 2
    for child in range(4):
        W[:, 0, child * per_child + 0] = 1.0
        W[:, 0, child * per_child + c2 + 1] = 2.0 / 4
    params["H1.W"] = W
    X = random_inputs(cfg, rng, 1)
    tape = tn.Tape()
    forward(params, cfg, X, tape)
    h_entry = next(e for e in tape.entries if e[0] == "H")
    (xg, _, _), _ = h_entry[2]
    trunk_in = next(e for e in tape.entries if e[0] == "V" and e[1] == 2)
    v1 = next(e for e in tape.entries if e[0] == "V" and e[1] == 1)
    T2 = np.einsum("bgi,goi->bgo", trunk_in[2][0], params["V2.W"]) + params["V2.b"]
    B1 = np.einsum("bgi,goi->bgo", v1[2][0], params["V1.W"]) + params["V1.b"]
    expect = T2[0, :, 0].reshape(4, 4).sum(axis=1) + 2 * B1[0, :, 1]
    got = np.einsum("gi,goi->go", xg[0], W)[:, 0]
    assert np.allclose(got, expect)


def test_switch_core_permutes_when_trivial():
    cfg = WideBNetConfig(L=4, s=1, r=1, band_sizes=(0, 0, 1), n_cnn=0, n_rnn=0)
    params = init_params(cfg, np.random.default_rng(3), np.float64)
    c = cfg.channels(2)
    params["S.W"] = np.broadcast_to(np.eye(c), (16, c, c)).copy()
    X = random_inputs(cfg, np.random.default_rng(4), 1)
    tape = tn.Tape()
    forward(params, cfg, X, tape)
    (s_in, _, _) = next(e for e in tape.entries if e[0] == "S")[2]
    h_out_entry = next(e for e in tape.entries if e[0] == "H" and e[1] == 2)
    (xg, W, _), _ = h_out_entry[2]
    trunk = (np.einsum("bgi,goi->bgo", xg, W) + params["H2.b"]).reshape(-1)
    rho = c // 16
    assert np.allclose(s_in.reshape(-1), trunk[switch_indices(cfg.spec, rho).indices], rtol=1e-13, atol=0)


def test_g_then_gather_represents_identity():
    # G splits each cell's 4g outputs into children; a k=4 gathering map can undo it
    rng = np.random.default_rng(5)
    g, cells = 3, 4
    x = rng.standard_normal((1, cells, 4 * g))
    Wg = np.broadcast_to(np.eye(4 * g), (cells, 4 * g, 4 * g)).copy()
    y, _ = tn.patch_affine_forward(Wg, np.zeros((cells, 4 * g)), x, 1)
    children = y.reshape(1, 4 * cells, g)
    back, _ = tn.patch_affine_forward(Wg, np.zeros((cells, 4 * g)), children, 4)
    assert np.array_equal(back, x)


def test_u_inverts_v_on_row_space():
    # leaf-level V with rank r compresses s^2 pixels; a pseudo-inverse U recovers
    # any input that lies in V's row space
    rng = np.random.default_rng(6)
    s, r = 3, 4
    V = rng.standard_normal((4, r, s * s))
    U = np.stack([np.linalg.pinv(V[g]) for g in range(4)])
    coeff = rng.standard_normal((1, 4, r))
    x = np.einsum("bgr,grp->bgp", coeff, V)  # rows of V per cell
    z, _ = tn.patch_affine_forward(V, np.zeros((4, r)), x, 1)
    xr, _ = tn.patch_affine_forward(U, np.zeros((4, s * s)), z, 1)
    assert np.allclose(xr, x)


def test_zero_input_gives_bias_image():
    cfg = WideBNetConfig(L=2, s=2, r=1, band_sizes=(0, 1), n_cnn=0, n_rnn=0)
    params = init_params(cfg, np.random.default_rng(7), np.float64)
    for k in params:
        if k.endswith(".b") and not k.startswith("U"):
            params[k][:] = 0
    params["U.b"] = np.arange(16 * 4, dtype=float).reshape(16, 4)
    X = {2: np.zeros((1, 8, 8, 2))}
    out = forward(params, cfg, X)
    expect = morton_unflatten(MortonTensor(2, params["U.b"]), cfg.spec)
    assert np.array_equal(out[0], expect)


@pytest.mark.parametrize(
    "cfg",
    [
        WideBNetConfig(L=2, s=2, r=2, band_sizes=(1, 1), n_cnn=2, n_rnn=2, cnn_kernel=3, cnn_channels=3),
        WideBNetConfig(L=2, s=2, r=2, band_sizes=(2, 1), n_cnn=1, n_rnn=1, cnn_kernel=3, strict_butterfly=True),
        WideBNetConfig(L=2, s=2, r=2, band_sizes=(0, 1), n_cnn=0, n_rnn=0, use_switch=False),
        WideBNetConfig(L=4, s=1, r=1, band_sizes=(1, 0, 1), n_cnn=1, n_rnn=1, cnn_kernel=3, strict_butterfly=True),
    ],
)
def test_full_model_gradient(cfg):
    assert model_grad_error(cfg) < 1e-5


def test_param_count_matches_built_on_random_configs():
    rng = np.random.default_rng(8)
    for _ in range(20):
        L = int(rng.choice([2, 4]))
        nb = L // 2 + 1
        bands = list(rng.integers(0, 3, nb))
        bands[-1] = max(1, bands[-1])
        cfg = WideBNetConfig(
            L=L,
            s=int(rng.integers(1, 4)),
            r=int(rng.integers(1, 3)),
            band_sizes=bands,
            n_cnn=int(rng.integers(0, 4)),
            n_rnn=int(rng.integers(0, 3)),
            cnn_kernel=int(rng.choice([1, 3, 5])),
            cnn_channels=int(rng.integers(1, 8)),
            strict_butterfly=bool(rng.integers(2)),
        )
        built = init_params(cfg, rng)
        assert param_count(cfg) == sum(a.size for a in built.values())
        assert {k: v.shape for k, v in built.items()} == param_shapes(cfg)


def test_param_count_frequency_partition_ordering():
    for r in (1, 2, 3):
        multi = WideBNetConfig(L=4, s=5, r=r, band_sizes=(1, 1, 1))
        every = WideBNetConfig(L=4, s=5, r=r, band_sizes=(0, 0, 3))
        assert param_count(multi) < param_count(every)


def test_switch_ablation_keeps_param_count():
    a = WideBNetConfig(L=4, s=5, r=2)
    b = WideBNetConfig(L=4, s=5, r=2, use_switch=False)
    c = WideBNetConfig(L=4, s=5, r=2, strict_butterfly=True)
    assert param_count(a) == param_count(b) == param_count(c)


def test_single_band_reduces_to_plain_butterfly_schedule():
    cfg = WideBNetConfig(L=4, s=5, r=1, band_sizes=(0, 0, 1), n_cnn=0, n_rnn=0)
    names = list(param_shapes(cfg))
    assert names == ["V4.W", "V4.b", "H3.W", "H3.b", "H2.W", "H2.b", "S.W", "S.b",
                     "G2.W", "G2.b", "G3.W", "G3.b", "U.W", "U.b"]  # fmt: skip
    assert param_shapes(cfg)["H3.W"] == (64, 8, 8)  # 4 children x c_4 -> c_3


def test_bands_to_input_layout():
    cfg = WideBNetConfig(L=2, s=2, r=1, band_sizes=(1, 2))
    rng = np.random.default_rng(9)
    bands = {1: rng.standard_normal((8, 8, 1)) + 1j, 2: rng.standard_normal((8, 8, 2)) - 2j}
    X = bands_to_input(bands, cfg, np.float64)
    assert X[2].shape == (8, 8, 4)
    assert np.array_equal(X[2][..., 2], bands[2][..., 1].real)
    assert np.array_equal(X[2][..., 3], bands[2][..., 1].imag)
    with pytest.raises(ValueError):
        bands_to_input({1: bands[1], 2: bands[2][..., :1]}, cfg)
    assert block_flatten(X[2][None], 2, 2).shape == (1, 16, 16)
    assert morton_flatten(np.zeros((8, 8)), cfg.spec).data.shape == (16, 4)
