"""Dataset directories: a JSON manifest, per-sample WBN1 records and a
JSON-lines file with scatterer metadata.

Layout::

    manifest.json
    train/000000.eta.wbn   train/000000.band4.wbn   ...
    train/samples.jsonl
    test/...
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .records import read_json, read_record, write_json, write_record
from .wavesim import SimConfig, assign_bands, generate_sample

SPLITS = {"train": 0, "test": 1}


def sample_seed(seed: int, split: str, index: int) -> tuple:
    return (int(seed), SPLITS[split], int(index))


def write_sample(root: Path, split: str, index: int, sample) -> dict:
    d = root / split
    d.mkdir(parents=True, exist_ok=True)
    stem = f"{index:06d}"
    write_record(d / f"{stem}.eta.wbn", sample.eta.astype(np.float64))
    for lvl, arr in sample.bands.items():
        if arr.shape[-1]:
            write_record(d / f"{stem}.band{lvl}.wbn", arr.astype(np.complex128))
    return {
        "index": index,
        "seed": list(sample.seed),
        "scatterers": [s.to_dict() for s in sample.scatterers],
    }


def generate_dataset(out, cfg: SimConfig, seed: int, ntrain: int, ntest: int, test_fd_order=None, log=None) -> dict:
    """Synthesize both splits. The test split may use a different FD order."""
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)
    bands = assign_bands(sorted(cfg.frequencies), cfg.spec)
    test_order = cfg.fd_order if test_fd_order is None else test_fd_order
    manifest = {
        "format": "WBN1",
        "seed": int(seed),
        "sim": cfg.to_dict(),
        "bands": {str(k): v for k, v in bands.items()},
        "splits": {"train": {"count": ntrain, "fd_order": cfg.fd_order}, "test": {"count": ntest, "fd_order": test_order}},
    }
    for split, count, order in (("train", ntrain, cfg.fd_order), ("test", ntest, test_order)):
        meta = []
        for i in range(count):
            sample = generate_sample(sample_seed(seed, split, i), cfg, order)
            meta.append(write_sample(root, split, i, sample))
            if log and (i + 1) % 50 == 0:
                log(f"{split}: {i + 1}/{count}")
        (root / split).mkdir(parents=True, exist_ok=True)
        with open(root / split / "samples.jsonl", "w") as fh:
            for m in meta:
                fh.write(json.dumps(m, sort_keys=True) + "\n")
    write_json(root / "manifest.json", manifest)
    return manifest


@dataclass
class Split:
    eta: np.ndarray  # [N, n, n]
    bands: dict  # level -> complex [N, n_src, n_rcv, n_omega]
    meta: list

    def __len__(self):
        return self.eta.shape[0]

    def centres_px(self, n: int, extent=(-0.5, 0.5)) -> list:
        """Scatterer centres per sample as fractional (row, col) pixel coordinates."""
        h = (extent[1] - extent[0]) / n
        out = []
        for m in self.meta:
            out.append([((s["position"][1] - extent[0]) / h - 0.5, (s["position"][0] - extent[0]) / h - 0.5)
                        for s in m["scatterers"]])  # fmt: skip
        return out


def load_manifest(root) -> dict:
    return read_json(Path(root) / "manifest.json")


def load_split(root, split: str, limit: int | None = None) -> Split:
    root = Path(root)
    manifest = load_manifest(root)
    count = manifest["splits"][split]["count"]
    if limit is not None:
        count = min(count, limit)
    levels = [int(k) for k, v in manifest["bands"].items() if v]
    d = root / split
    with open(d / "samples.jsonl") as fh:
        meta = [json.loads(line) for line in fh][:count]
    eta = np.stack([read_record(d / f"{i:06d}.eta.wbn") for i in range(count)]) if count else None
    bands = {lvl: np.stack([read_record(d / f"{i:06d}.band{lvl}.wbn") for i in range(count)]) for lvl in levels}
    return Split(eta, bands, meta)
