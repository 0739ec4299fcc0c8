"""WideBNet: band-wise V compressors, decimating H layers with frequency
injection, the switch/residual core, G expanders, U decoder and a CNN.

The trunk is a batched Morton tensor ``[batch, 4^level, channels]``. Level
``l`` carries ``c_l = 4^(L-l) * 2r * nu_l`` channels, where
``nu_l = sum_{i >= l} n_omega^i`` counts the frequencies absorbed so far and
the factor 2 holds real and imaginary parts.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensornet as tn
from .geometry import GridSpec, PermIndex, block_flatten, block_unflatten, perm_indices, switch_indices


@dataclass(frozen=True)
class WideBNetConfig:
    L: int = 4
    s: int = 5
    r: int = 2
    band_sizes: tuple = (1, 1, 1)  # n_omega for levels L/2 .. L
    n_cnn: int = 3
    n_rnn: int = 3
    cnn_kernel: int = 5
    cnn_channels: int = 16
    strict_butterfly: bool = False
    use_switch: bool = True

    def __post_init__(self):
        object.__setattr__(self, "band_sizes", tuple(int(v) for v in self.band_sizes))
        spec = self.spec  # validates L and s
        if len(self.band_sizes) != spec.L - spec.mid + 1:
            raise ValueError(f"need {spec.L - spec.mid + 1} band sizes, got {len(self.band_sizes)}")
        if any(v < 0 for v in self.band_sizes) or self.band_sizes[-1] < 1:
            raise ValueError("band sizes must be nonnegative with at least one frequency at level L")
        if self.r < 1 or self.n_cnn < 0 or self.n_rnn < 0 or self.cnn_channels < 1:
            raise ValueError("invalid rank or layer counts")
        if self.cnn_kernel < 1 or self.cnn_kernel % 2 == 0:
            raise ValueError("cnn kernel must be a positive odd integer")

    @property
    def spec(self) -> GridSpec:
        return GridSpec(self.L, self.s)

    def n_omega(self, level: int) -> int:
        return self.band_sizes[level - self.spec.mid]

    def nu(self, level: int) -> int:
        return sum(self.n_omega(i) for i in range(level, self.L + 1))

    def channels(self, level: int) -> int:
        return 4 ** (self.L - level) * 2 * self.r * self.nu(level)

    def to_dict(self):
        d = asdict(self)
        d["band_sizes"] = list(self.band_sizes)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def param_shapes(cfg: WideBNetConfig) -> dict:
    """Name -> shape for every trainable array, in a fixed order."""
    L, mid, s, r = cfg.L, cfg.spec.mid, cfg.s, cfg.r
    shapes = {}

    def affine(name, groups, fan_out, fan_in):
        shapes[f"{name}.W"] = (groups, fan_out, fan_in)
        shapes[f"{name}.b"] = (groups, fan_out)

    for lvl in range(L, mid - 1, -1):
        nw = cfg.n_omega(lvl)
        if nw:
            side = 2 ** (L - lvl) * s
            affine(f"V{lvl}", 4**lvl, 2 * r * nw, 2 * nw * side * side)
    for lvl in range(L - 1, mid - 1, -1):
        fan_in = 4 * (cfg.channels(lvl + 1) + 2 * r * cfg.n_omega(lvl))
        affine(f"H{lvl}", 4**lvl, cfg.channels(lvl), fan_in)
    c_mid = cfg.channels(mid)
    affine("S", 4**mid, c_mid, c_mid)
    for i in range(cfg.n_rnn):
        affine(f"R{i}", 4**mid, c_mid, c_mid)
    for lvl in range(mid, L):
        affine(f"G{lvl}", 4**lvl, 4 * cfg.channels(lvl + 1), cfg.channels(lvl))
    affine("U", 4**L, s * s, cfg.channels(L))
    k = cfg.cnn_kernel
    for i in range(cfg.n_cnn):
        cin = 1 if i == 0 else cfg.cnn_channels
        cout = 1 if i == cfg.n_cnn - 1 else cfg.cnn_channels
        shapes[f"C{i}.W"] = (k, k, cin, cout)
        shapes[f"C{i}.b"] = (cout,)
    return shapes


def param_count(cfg: WideBNetConfig) -> int:
    return int(sum(np.prod(shape, dtype=np.int64) for shape in param_shapes(cfg).values()))


def init_params(cfg: WideBNetConfig, rng: np.random.Generator, dtype=np.float32) -> dict:
    """Glorot-uniform weights, zero biases."""
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            params[name] = tn.glorot_init(shape, rng, dtype=dtype)
    return params


def bands_to_input(bands: dict, cfg: WideBNetConfig, dtype=np.float32) -> dict:
    """Complex bands ``{level: [..., n, n, n_omega]}`` -> real ``[..., n, n, 2 n_omega]``
    with channels ordered ``[Re f1, Im f1, Re f2, ...]``."""
    out = {}
    for lvl in cfg.spec.levels():
        nw = cfg.n_omega(lvl)
        if nw == 0:
            continue
        a = np.asarray(bands[lvl])
        if a.shape[-1] != nw or a.shape[-3:-1] != (cfg.spec.n, cfg.spec.n):
            raise ValueError(f"band {lvl}: expected [..., {cfg.spec.n}, {cfg.spec.n}, {nw}], got {a.shape}")
        out[lvl] = np.stack([a.real, a.imag], axis=-1).reshape(*a.shape[:-1], 2 * nw).astype(dtype)
    return out


def _trunk_perm(cfg: WideBNetConfig, lvl: int) -> PermIndex:
    """Sibling-gathering permutation for a trunk at level ``lvl + 1``."""
    rho = cfg.channels(lvl + 1) // 4 ** (cfg.L - lvl - 1)
    return perm_indices(cfg.spec, lvl, rho)


def _switch_perm(cfg: WideBNetConfig) -> np.ndarray:
    mid = cfg.spec.mid
    rho = cfg.channels(mid) // 4**mid
    if cfg.use_switch:
        return switch_indices(cfg.spec, rho).indices
    return np.arange(4**cfg.L * rho)


def forward(params: dict, cfg: WideBNetConfig, X: dict, tape: tn.Tape | None = None) -> np.ndarray:
    """Predict eta ``[batch, n, n]`` from real inputs ``X[level]`` of shape ``[batch, n, n, 2 n_omega]``."""
    L, mid, s = cfg.L, cfg.spec.mid, cfg.s
    rec = tape.push if tape is not None else (lambda *a: None)
    batch = X[L].shape[0]

    def v_layer(lvl):
        x = X[lvl]
        side = 2 ** (L - lvl) * s
        if x.shape[-1] != 2 * cfg.n_omega(lvl) or x.shape[1:3] != (cfg.spec.n, cfg.spec.n):
            raise ValueError(f"V{lvl}: unexpected input shape {x.shape}")
        y, c = tn.patch_affine_forward(params[f"V{lvl}.W"], params[f"V{lvl}.b"], block_flatten(x, lvl, side), 1)
        rec("V", lvl, c)
        return y

    T = v_layer(L)
    for lvl in range(L - 1, mid - 1, -1):
        if cfg.strict_butterfly:
            idx = _trunk_perm(cfg, lvl).indices
            shape = T.shape
            T = T.reshape(batch, -1)[:, idx].reshape(shape)
        parts = [T]
        if cfg.n_omega(lvl):
            parts.append(np.repeat(v_layer(lvl), 4, axis=1))
        Z = np.concatenate(parts, axis=2)
        T, c = tn.patch_affine_forward(params[f"H{lvl}.W"], params[f"H{lvl}.b"], Z, 4)
        rec("H", lvl, (c, parts[0].shape[2]))
        assert T.shape[1:] == (4**lvl, cfg.channels(lvl))

    idx = _switch_perm(cfg)
    shape = T.shape
    T = T.reshape(batch, -1)[:, idx].reshape(shape)
    T, c = tn.patch_affine_forward(params["S.W"], params["S.b"], T, 1)
    rec("S", None, c)
    for i in range(cfg.n_rnn):
        T, c = tn.resnet_unit_forward(params[f"R{i}.W"], params[f"R{i}.b"], T)
        rec("R", i, c)

    for lvl in range(mid, L):
        Y, c = tn.patch_affine_forward(params[f"G{lvl}.W"], params[f"G{lvl}.b"], T, 1)
        rec("G", lvl, c)
        T = Y.reshape(batch, 4 ** (lvl + 1), cfg.channels(lvl + 1))
        if cfg.strict_butterfly:
            inv = _trunk_perm(cfg, lvl).inverse().indices
            T = T.reshape(batch, -1)[:, inv].reshape(T.shape)

    Y, c = tn.patch_affine_forward(params["U.W"], params["U.b"], T, 1)
    rec("U", None, c)
    img = block_unflatten(Y, L, s, 1)
    for i in range(cfg.n_cnn):
        img, c = tn.conv2d_forward(params[f"C{i}.W"], params[f"C{i}.b"], img)
        rec("C", i, c)
        if i < cfg.n_cnn - 1:
            img, mask = tn.relu_forward(img)
            rec("A", i, mask)
    return img[..., 0]


def backward(params: dict, cfg: WideBNetConfig, tape: tn.Tape, d_out: np.ndarray) -> dict:
    """Parameter gradients of a scalar loss given ``d_out = dloss/dprediction``."""
    L, mid, s = cfg.L, cfg.spec.mid, cfg.s
    grads = {}
    entries = list(tape.entries)

    def pop(kind):
        k, name, cache = entries.pop()
        if k != kind:
            raise RuntimeError(f"tape out of order: expected {kind}, found {k}")
        return name, cache

    def store(prefix, dW, db):
        grads[f"{prefix}.W"] = dW
        grads[f"{prefix}.b"] = db

    d = d_out[..., None]
    batch = d.shape[0]
    for i in reversed(range(cfg.n_cnn)):
        if i < cfg.n_cnn - 1:
            _, mask = pop("A")
            d = tn.relu_backward(d, mask)
        _, c = pop("C")
        d, dW, db = tn.conv2d_backward(d, c)
        store(f"C{i}", dW, db)

    d = block_flatten(d, L, s)
    _, c = pop("U")
    d, dW, db = tn.patch_affine_backward(d, c)
    store("U", dW, db)

    for lvl in reversed(range(mid, L)):
        if cfg.strict_butterfly:
            inv = _trunk_perm(cfg, lvl).inverse().indices
            flat = np.empty_like(d.reshape(batch, -1))
            flat[:, inv] = d.reshape(batch, -1)
            d = flat.reshape(d.shape)
        d = d.reshape(batch, 4**lvl, 4 * cfg.channels(lvl + 1))
        _, c = pop("G")
        d, dW, db = tn.patch_affine_backward(d, c)
        store(f"G{lvl}", dW, db)

    for i in reversed(range(cfg.n_rnn)):
        _, c = pop("R")
        d, dW, db = tn.resnet_unit_backward(d, c)
        store(f"R{i}", dW, db)
    _, c = pop("S")
    d, dW, db = tn.patch_affine_backward(d, c)
    store("S", dW, db)
    idx = _switch_perm(cfg)
    flat = np.empty_like(d.reshape(batch, -1))
    flat[:, idx] = d.reshape(batch, -1)
    d = flat.reshape(d.shape)

    for lvl in range(mid, L):
        _, (c, c_trunk) = pop("H")
        dZ, dW, db = tn.patch_affine_backward(d, c)
        store(f"H{lvl}", dW, db)
        d = dZ[..., :c_trunk]
        if cfg.n_omega(lvl):
            dB = dZ[..., c_trunk:]
            dB = dB.reshape(batch, 4**lvl, 4, -1).sum(axis=2)
            _, cv = pop("V")
            _, dW, db = tn.patch_affine_backward(dB, cv)
            store(f"V{lvl}", dW, db)
        if cfg.strict_butterfly:
            idx = _trunk_perm(cfg, lvl).indices
            flat = np.empty_like(d.reshape(batch, -1))
            flat[:, idx] = d.reshape(batch, -1)
            d = flat.reshape(d.shape)

    _, cv = pop("V")
    _, dW, db = tn.patch_affine_backward(d, cv)
    store(f"V{L}", dW, db)
    if entries:
        raise RuntimeError("unconsumed tape entries")
    return grads
