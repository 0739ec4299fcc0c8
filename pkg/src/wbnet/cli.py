"""Command-line entry point: ``wbnet <command> [options]``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import selftest
from .dataset import generate_dataset, load_manifest, load_split
from .imaging_baseline import farfield_matrix, multifreq_image, tikhonov_image
from .records import read_json, write_json, write_record
from .render import render_png
from .training import LossSpec, TrainConfig, evaluate, load_checkpoint, prepare, train
from .wavesim import SimConfig, assign_bands
from .widebnet import WideBNetConfig, param_count


def load_config(path) -> dict:
    """Config file: ``{"sim": {...}, "model": {...}, "train": {...}, "test_fd_order": 4}``."""
    raw = read_json(path)
    return {
        "sim": SimConfig.from_dict(raw.get("sim", {})),
        "model": raw.get("model", {}),
        "train": raw.get("train", {}),
        "test_fd_order": raw.get("test_fd_order"),
    }


def model_config(model: dict, manifest: dict | None = None) -> WideBNetConfig:
    d = dict(model)
    if manifest is not None:
        sim = manifest["sim"]
        d.setdefault("L", sim["L"])
        d.setdefault("s", sim["s"])
        bands = {int(k): len(v) for k, v in manifest["bands"].items()}
        sizes = [bands[lvl] for lvl in sorted(bands)]
        if "band_sizes" in d and list(d["band_sizes"]) != sizes:
            raise SystemExit(f"model band_sizes {d['band_sizes']} do not match the dataset bands {sizes}")
        d["band_sizes"] = sizes
    return WideBNetConfig.from_dict(d)


def argmax_hits(preds, centres, radius=2.0) -> np.ndarray:
    """Whether each prediction's argmax lies within ``radius`` pixels of a true centre."""
    hits = []
    for p, cs in zip(preds, centres):
        i, j = np.unravel_index(np.argmax(p), p.shape)
        hits.append(any(np.hypot(i - ci, j - cj) <= radius for ci, cj in cs))
    return np.array(hits)


def cmd_gen_data(a):
    cfg = load_config(a.config)
    generate_dataset(a.out, cfg["sim"], a.seed, a.ntrain, a.ntest, cfg["test_fd_order"], log=_log(a))
    return 0


def cmd_train(a):
    cfg = load_config(a.config)
    manifest = load_manifest(a.data)
    mcfg = model_config(cfg["model"], manifest)
    tdict = dict(cfg["train"])
    tdict.update({"epochs": a.epochs, "batch": a.batch, "seed": a.seed})
    tcfg = TrainConfig(**tdict)
    tr = load_split(a.data, "train")
    te = load_split(a.data, "test")
    resume = a.resume
    if resume is None and a.resume_auto and (Path(a.out) / "checkpoint" / "manifest.json").exists():
        resume = Path(a.out) / "checkpoint"
    train(mcfg, tcfg, tr.bands, tr.eta, te.bands, te.eta, out=a.out, resume=resume, stop_after=a.stop_after, log=_log(a))
    return 0


def cmd_infer(a):
    mcfg, tcfg, params, _, _, scales, _ = load_checkpoint(a.checkpoint)
    split = load_split(a.data, a.split, a.limit)
    loss = LossSpec(tcfg.loss_width)
    data = prepare(split.bands, split.eta, mcfg, scales, loss, np.dtype(tcfg.dtype))
    pix, rel, preds = evaluate(params, mcfg, data)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    write_record(out / "pred.wbn", preds.astype(np.float32))
    manifest = load_manifest(a.data)
    hits = argmax_hits(preds, split.centres_px(mcfg.spec.n, tuple(manifest["sim"]["extent"])))
    summary = {
        "count": len(split),
        "pixel_loss_mean": float(pix.mean()),
        "relative_loss_mean": float(rel.mean()),
        "argmax_within_2px": float(hits.mean()),
        "per_sample": [{"pixel_loss": float(p), "relative_loss": float(r)} for p, r in zip(pix, rel)],
    }
    write_json(out / "metrics.json", summary)
    if a.png:
        for i in range(min(a.png_count, len(split))):
            truth = data.target[i]
            render_png(split.eta[i], out / f"{i:06d}_eta.png")
            render_png(truth, out / f"{i:06d}_target.png", reference=truth)
            render_png(preds[i], out / f"{i:06d}_pred.png", reference=truth)
    print(json.dumps({k: v for k, v in summary.items() if k != "per_sample"}))
    return 0


def cmd_image_ls(a):
    manifest = load_manifest(a.data)
    sim = SimConfig.from_dict(manifest["sim"])
    split = load_split(a.data, a.split, a.index + 1)
    freq_band = {f: (int(lvl), k) for lvl, fs in manifest["bands"].items() for k, f in enumerate(fs)}
    freqs = sorted(freq_band) if a.all_freqs else [a.freq]
    for f in freqs:
        if f not in freq_band:
            raise SystemExit(f"frequency {f} not in dataset (have {sorted(freq_band)})")
    data, ops = {}, {}
    for f in freqs:
        lvl, k = freq_band[f]
        data[f] = split.bands[lvl][a.index, :, :, k]
        ops[f] = farfield_matrix(2 * np.pi * f, sim.spec.n, sim.geometry, sim.extent)
    if len(freqs) == 1:
        img = tikhonov_image(data[freqs[0]], ops[freqs[0]], a.epsilon)
    else:
        img = multifreq_image(data, ops, a.epsilon)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    tag = "all" if a.all_freqs else f"{a.freq:g}Hz"
    write_record(out / f"ls_{tag}_{a.index:06d}.wbn", img)
    mag = np.abs(img)
    render_png(mag, out / f"ls_{tag}_{a.index:06d}_raw.png", reference=np.array([0.0, max(mag.max(), 1e-300)]))
    render_png(mag / max(mag.max(), 1e-300), out / f"ls_{tag}_{a.index:06d}_norm.png", reference=np.array([0.0, 1.0]))
    render_png(split.eta[a.index], out / f"eta_{a.index:06d}.png")
    return 0


def cmd_selftest(a):
    ok_all = True
    for name, (ok, detail) in selftest.run(a.suite).items():
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        ok_all &= ok
    return 0 if ok_all else 1


def cmd_param_count(a):
    cfg = load_config(a.config)
    model = dict(cfg["model"])
    sim = cfg["sim"]
    model.setdefault("L", sim.L)
    model.setdefault("s", sim.s)
    bands = assign_bands(sim.frequencies, sim.spec)
    model.setdefault("band_sizes", [len(bands[lvl]) for lvl in sorted(bands)])
    print(param_count(WideBNetConfig.from_dict(model)))
    return 0


def _log(a):
    return None if getattr(a, "quiet", False) else (lambda msg: print(msg, flush=True))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wbnet", description="Wide-band butterfly network toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="synthesize a scattering dataset")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--ntrain", type=int, default=21000)
    g.add_argument("--ntest", type=int, default=4000)
    g.add_argument("--quiet", action="store_true")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int, default=150)
    t.add_argument("--batch", type=int, default=32)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--resume", default=None, help="checkpoint directory to continue from")
    t.add_argument("--resume-auto", action="store_true", help="continue from OUT/checkpoint when present")
    t.add_argument("--stop-after", type=int, default=None, help="stop after this many epochs")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="evaluate a checkpoint on a dataset split")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--split", default="test", choices=["train", "test"])
    i.add_argument("--limit", type=int, default=None)
    i.add_argument("--png", action="store_true")
    i.add_argument("--png-count", type=int, default=8)
    i.set_defaults(func=cmd_infer)

    ls = sub.add_parser("image-ls", help="far-field least-squares baseline images")
    ls.add_argument("--data", required=True)
    fsel = ls.add_mutually_exclusive_group(required=True)
    fsel.add_argument("--freq", type=float, help="probe frequency in Hz")
    fsel.add_argument("--all-freqs", action="store_true")
    ls.add_argument("--epsilon", type=float, default=1.0)
    ls.add_argument("--out", required=True)
    ls.add_argument("--split", default="test", choices=["train", "test"])
    ls.add_argument("--index", type=int, default=0)
    ls.set_defaults(func=cmd_image_ls)

    s = sub.add_parser("selftest", help="run oracle suites")
    s.add_argument("--suite", default="all", choices=["all", *selftest.SUITES])
    s.set_defaults(func=cmd_selftest)

    c = sub.add_parser("param-count", help="trainable parameter count of a config")
    c.add_argument("--config", required=True)
    c.set_defaults(func=cmd_param_count)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
