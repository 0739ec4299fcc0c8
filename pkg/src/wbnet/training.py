"""Losses, Adam, the learning-rate staircase, the training loop with
checkpoint/resume, and finite-difference gradient checks."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import tensornet as tn
from . import widebnet as wb
from .records import read_json, read_record, write_json, write_record


class TrainingError(RuntimeError):
    pass


# --- losses ---------------------------------------------------------------


@dataclass(frozen=True)
class LossSpec:
    width: float = 0.75  # Gaussian std in grid points
    radius: int | None = None  # default ceil(4 * width)

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError("kernel width must be positive")

    def kernel(self) -> np.ndarray:
        R = self.radius if self.radius is not None else int(math.ceil(4 * self.width))
        t = np.arange(-R, R + 1)
        g = np.exp(-(t**2) / (2 * self.width**2))
        k = np.outer(g, g)
        return k / k.sum()


def smooth_target(eta, spec: LossSpec = LossSpec()) -> np.ndarray:
    """Gaussian blur with zero padding; works on [n, n] or [batch, n, n]."""
    eta = np.asarray(eta)
    k = spec.kernel().astype(eta.dtype if eta.dtype.kind == "f" else float)
    if eta.ndim == 3:
        k = k[None]
    return ndimage.correlate(eta, k, mode="constant", cval=0.0)


def pixel_loss(pred, eta, spec: LossSpec = LossSpec(), target=None):
    """Sum over pixels of squared residual against the blurred target; per sample for batches."""
    pred = np.asarray(pred)
    if np.shape(pred) != np.shape(eta):
        raise ValueError(f"shape mismatch {np.shape(pred)} vs {np.shape(eta)}")
    t = smooth_target(eta, spec) if target is None else target
    return np.sum((t - pred) ** 2, axis=(-2, -1))


def relative_loss(pred, eta, spec: LossSpec = LossSpec(), target=None):
    pred = np.asarray(pred)
    if np.shape(pred) != np.shape(eta):
        raise ValueError(f"shape mismatch {np.shape(pred)} vs {np.shape(eta)}")
    t = smooth_target(eta, spec) if target is None else target
    denom = np.sum(t**2, axis=(-2, -1))
    if np.any(denom == 0):
        raise ValueError("smoothed target is identically zero")
    return np.sum((t - pred) ** 2, axis=(-2, -1)) / denom


# --- optimizer ------------------------------------------------------------


def lr_schedule(step: int, base: float = 5e-3, decay: float = 0.95, interval: int = 2000, staircase: bool = True):
    if step < 0:
        raise ValueError("step must be nonnegative")
    e = step // interval if staircase else step / interval
    return base * decay**e


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict, **kw):
        return cls({k: np.zeros_like(a) for k, a in params.items()}, {k: np.zeros_like(a) for k, a in params.items()}, **kw)


def adam_step(state: AdamState, params: dict, grads: dict, lr: float) -> None:
    """In-place bias-corrected Adam update of ``params`` and ``state``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    for name in params:
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        upd = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        params[name] -= upd.astype(params[name].dtype, copy=False)


# --- training loop --------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 150
    batch: int = 32
    seed: int = 0
    lr: float = 5e-3
    decay: float = 0.95
    decay_interval: int = 2000
    val_size: int = 300
    checkpoint_every: int = 10
    loss_width: float = 0.75
    dtype: str = "float32"


@dataclass
class Prepared:
    """Network inputs and blurred targets for one split."""

    X: dict
    eta: np.ndarray
    target: np.ndarray

    def __len__(self):
        return self.eta.shape[0]

    def take(self, idx):
        return {k: v[idx] for k, v in self.X.items()}, self.target[idx]


def band_scales(bands: dict) -> dict:
    """Per-band RMS of the complex data, used to normalize network inputs."""
    return {int(k): float(np.sqrt(np.mean(np.abs(v) ** 2))) for k, v in bands.items() if v.shape[-1]}


def prepare(bands: dict, eta, cfg: wb.WideBNetConfig, scales: dict, loss: LossSpec, dtype=np.float32) -> Prepared:
    scaled = {lvl: bands[lvl] / scales[lvl] for lvl in scales}
    X = wb.bands_to_input(scaled, cfg, dtype)
    eta = np.asarray(eta, dtype=dtype)
    return Prepared(X, eta, smooth_target(eta, loss).astype(dtype))


def _epoch_order(seed: int, epoch: int, count: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(count)


def evaluate(params, cfg, data: Prepared, batch: int = 64):
    pix, rel, preds = [], [], []
    for lo in range(0, len(data), batch):
        X, t = data.take(slice(lo, lo + batch))
        p = wb.forward(params, cfg, X)
        preds.append(p)
        pix.append(np.sum((t - p) ** 2, axis=(1, 2), dtype=np.float64))
        rel.append(pix[-1] / np.sum(t.astype(np.float64) ** 2, axis=(1, 2)))
    return np.concatenate(pix), np.concatenate(rel), np.concatenate(preds)


METRIC_COLUMNS = [
    "epoch",
    "step",
    "lr",
    "train_pixel_loss",
    "train_rel_loss",
    "val_pixel_loss",
    "val_rel_loss",
    "wall_time_s",
]


def save_checkpoint(path, cfg: wb.WideBNetConfig, tcfg: TrainConfig, params, state: AdamState, epoch, scales, history):
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    for name, a in params.items():
        write_record(d / f"param.{name}.wbn", a)
        write_record(d / f"adam_m.{name}.wbn", state.m[name])
        write_record(d / f"adam_v.{name}.wbn", state.v[name])
    write_json(
        d / "manifest.json",
        {
            "model": cfg.to_dict(),
            "train": asdict(tcfg),
            "epoch": epoch,
            "step": state.step,
            "scales": {str(k): v for k, v in scales.items()},
            "params": list(params),
            "metrics": history,
        },
    )


def load_checkpoint(path):
    d = Path(path)
    man = read_json(d / "manifest.json")
    cfg = wb.WideBNetConfig.from_dict(man["model"])
    tcfg = TrainConfig(**man["train"])
    params = {n: read_record(d / f"param.{n}.wbn") for n in man["params"]}
    state = AdamState(
        {n: read_record(d / f"adam_m.{n}.wbn") for n in man["params"]},
        {n: read_record(d / f"adam_v.{n}.wbn") for n in man["params"]},
        step=man["step"],
    )
    scales = {int(k): v for k, v in man["scales"].items()}
    return cfg, tcfg, params, state, man["epoch"], scales, man["metrics"]


def train(
    cfg: wb.WideBNetConfig,
    tcfg: TrainConfig,
    train_bands: dict,
    train_eta,
    val_bands: dict | None = None,
    val_eta=None,
    out=None,
    resume=None,
    stop_after: int | None = None,
    log=None,
):
    """Mini-batch Adam on the blurred-target pixel loss.

    Returns ``(params, history)``. ``resume`` is a checkpoint directory;
    ``stop_after`` ends the run after that many epochs of this call (the
    checkpoint then allows an exact continuation).
    """
    dtype = np.dtype(tcfg.dtype)
    loss = LossSpec(tcfg.loss_width)
    if resume is not None:
        cfg_r, _, params, state, start, scales, history = load_checkpoint(resume)
        if cfg_r != cfg:
            raise TrainingError("checkpoint model config differs from the requested one")
    else:
        params = wb.init_params(cfg, np.random.default_rng([tcfg.seed]), dtype)
        state = AdamState.zeros_like(params)
        scales = band_scales(train_bands)
        start, history = 0, []
    data = prepare(train_bands, train_eta, cfg, scales, loss, dtype)
    val = None
    if val_bands is not None and len(val_eta):
        vidx = np.sort(np.random.default_rng([tcfg.seed, 2**31]).permutation(len(val_eta))[: tcfg.val_size])
        val = prepare({k: v[vidx] for k, v in val_bands.items()}, np.asarray(val_eta)[vidx], cfg, scales, loss, dtype)
    out = Path(out) if out is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    end = tcfg.epochs if stop_after is None else min(tcfg.epochs, start + stop_after)
    for epoch in range(start, end):
        order = _epoch_order(tcfg.seed, epoch, len(data))
        pix_sum = rel_sum = 0.0
        for lo in range(0, len(order), tcfg.batch):
            idx = np.sort(order[lo : lo + tcfg.batch])
            X, t = data.take(idx)
            tape = tn.Tape()
            pred = wb.forward(params, cfg, X, tape)
            resid = pred - t
            per = np.sum(resid.astype(np.float64) ** 2, axis=(1, 2))
            if not np.all(np.isfinite(per)):
                raise TrainingError(f"non-finite loss at epoch {epoch + 1}, step {state.step}")
            pix_sum += per.sum()
            rel_sum += np.sum(per / np.sum(t.astype(np.float64) ** 2, axis=(1, 2)))
            grads = wb.backward(params, cfg, tape, (2.0 / len(idx)) * resid)
            lr = lr_schedule(state.step, tcfg.lr, tcfg.decay, tcfg.decay_interval)
            adam_step(state, params, grads, lr)
        row = {
            "epoch": epoch + 1,
            "step": state.step,
            "lr": lr_schedule(state.step, tcfg.lr, tcfg.decay, tcfg.decay_interval),
            "train_pixel_loss": pix_sum / len(data),
            "train_rel_loss": rel_sum / len(data),
            "val_pixel_loss": float("nan"),
            "val_rel_loss": float("nan"),
            "wall_time_s": time.perf_counter() - t0,
        }
        if val is not None:
            vp, vr, _ = evaluate(params, cfg, val)
            row["val_pixel_loss"] = float(vp.mean())
            row["val_rel_loss"] = float(vr.mean())
        history.append(row)
        if log:
            log(", ".join(f"{k}={row[k]:.4g}" if isinstance(row[k], float) else f"{k}={row[k]}" for k in METRIC_COLUMNS))
        if out is not None:
            write_metrics(out / "metrics.csv", history)
            last = epoch + 1 == end
            if last or (tcfg.checkpoint_every and (epoch + 1) % tcfg.checkpoint_every == 0):
                save_checkpoint(out / "checkpoint", cfg, tcfg, params, state, epoch + 1, scales, history)
    return params, history


def write_metrics(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        w.writeheader()
        for row in history:
            w.writerow(row)


# --- gradient checks ------------------------------------------------------


def fd_relative_error(f, arrays, grads, rng, probes=8, step=1e-6) -> float:
    """Largest per-array ``|fd - analytic| / |analytic|`` over random probes."""
    worst = 0.0
    for a, g in zip(arrays, grads):
        flat = a.reshape(-1)
        idx = rng.choice(flat.size, min(probes, flat.size), replace=False)
        fd = np.empty(len(idx))
        for t, i in enumerate(idx):
            old = flat[i]
            eps = step * max(1.0, abs(old))
            flat[i] = old + eps
            lp = f()
            flat[i] = old - eps
            lm = f()
            flat[i] = old
            fd[t] = (lp - lm) / (2 * eps)
        an = g.reshape(-1)[idx]
        worst = max(worst, float(np.linalg.norm(fd - an) / max(np.linalg.norm(an), 1e-300)))
    return worst


def grad_check(rng: np.random.Generator | None = None, cfg: wb.WideBNetConfig | None = None) -> dict:
    """Central-difference check per layer kind and for a tiny full model (float64)."""
    rng = rng or np.random.default_rng(0)
    report = {}

    W = rng.standard_normal((3, 5, 8))
    b = rng.standard_normal((3, 5))
    x = rng.standard_normal((2, 12, 2))
    c = rng.standard_normal((2, 3, 5))
    dx, dW, db = tn.patch_affine_backward(c, tn.patch_affine_forward(W, b, x, 4)[1])
    report["patch_affine"] = fd_relative_error(lambda: np.sum(c * tn.patch_affine_forward(W, b, x, 4)[0]), [x, W, b], [dx, dW, db], rng)

    K = rng.standard_normal((3, 3, 2, 3))
    kb = rng.standard_normal(3)
    xi = rng.standard_normal((2, 6, 5, 2))
    ci = rng.standard_normal((2, 6, 5, 3))
    dx, dK, dkb = tn.conv2d_backward(ci, tn.conv2d_forward(K, kb, xi)[1])
    report["conv2d"] = fd_relative_error(lambda: np.sum(ci * tn.conv2d_forward(K, kb, xi)[0]), [xi, K, kb], [dx, dK, dkb], rng)

    Wr = rng.standard_normal((3, 4, 4))
    br = rng.standard_normal((3, 4))
    xr = rng.standard_normal((2, 3, 4))
    cr = rng.standard_normal((2, 3, 4))
    dx, dW, db = tn.resnet_unit_backward(cr, tn.resnet_unit_forward(Wr, br, xr)[1])
    report["resnet_unit"] = fd_relative_error(lambda: np.sum(cr * tn.resnet_unit_forward(Wr, br, xr)[0]), [xr, Wr, br], [dx, dW, db], rng)

    cfg = cfg or wb.WideBNetConfig(L=2, s=2, r=2, band_sizes=(1, 1), n_cnn=2, n_rnn=2, cnn_kernel=3, cnn_channels=4)
    params = wb.init_params(cfg, rng, np.float64)
    for k in params:
        params[k] += 0.1 * rng.standard_normal(params[k].shape)
    n = cfg.spec.n
    X = {lvl: rng.standard_normal((2, n, n, 2 * cfg.n_omega(lvl))) for lvl in cfg.spec.levels() if cfg.n_omega(lvl)}
    target = rng.standard_normal((2, n, n))
    tape = tn.Tape()
    pred = wb.forward(params, cfg, X, tape)
    grads = wb.backward(params, cfg, tape, pred - target)
    names = list(params)
    report["widebnet"] = fd_relative_error(
        lambda: 0.5 * np.sum((wb.forward(params, cfg, X) - target) ** 2),
        [params[k] for k in names],
        [grads[k] for k in names],
        rng,
        probes=6,
    )
    return report
