"""Checkpoints and tabular outputs.

A checkpoint is a text header followed by a little-endian float64 payload::

    stdgmrf-checkpoint 1
    meta {"n_steps": 11, ...}
    array spatial 2,2,3 0 12
    ...
    end

Each ``array`` line gives name, shape, offset and length into the payload.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .prior import ModelParams
from .vi import Manifest, VariationalParams, pack, unpack

MAGIC = "stdgmrf-checkpoint 1"


def save_checkpoint(path: str | Path, m: ModelParams, vp: VariationalParams, extra: dict | None = None) -> None:
    man = Manifest.of(m, vp)
    meta = {
        "n_steps": m.n_steps,
        "markov_order": m.markov_order,
        "time_invariant": m.time_invariant,
        "temporal_variant": m.temporal_variant,
        "n_nodes": int(vp.nu.shape[1]),
        "vi_temporal": vp.f_tilde is not None,
    }
    if extra:
        meta["extra"] = extra
    lines = [MAGIC, "meta " + json.dumps(meta, sort_keys=True)]
    for name, shape, off, n in man.offsets():
        lines.append(f"array {name} {','.join(map(str, shape)) or '-'} {off} {n}")
    lines.append("end")
    payload = pack(m, vp).astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        fh.write(payload)


def load_checkpoint(path: str | Path):
    """Return ``(ModelParams, VariationalParams, meta)``."""
    raw = Path(path).read_bytes()
    end = raw.index(b"\nend\n") + len(b"\nend\n")
    header = raw[:end].decode("ascii").splitlines()
    if header[0] != MAGIC:
        raise ValueError(f"{path} is not a checkpoint")
    meta = json.loads(header[1][len("meta "):])
    shapes = {}
    for line in header[2:-1]:
        _, name, shape, _, _ = line.split()
        shapes[name] = tuple(int(s) for s in shape.split(",")) if shape != "-" else ()
    vec = np.frombuffer(raw[end:], dtype="<f8").astype(float)
    zeros = {k: np.zeros(s) for k, s in shapes.items()}
    m0 = ModelParams(meta["n_steps"], meta["markov_order"], meta["time_invariant"], meta["temporal_variant"],
                     zeros["spatial"], zeros["bias_s"], zeros["bias_f"], zeros["temporal"])
    vp0 = VariationalParams(zeros["nu"], zeros["log_rho"], zeros["log_psi"], zeros["s_tilde"],
                            zeros.get("f_tilde"))
    if vec.size != Manifest.of(m0, vp0).size:
        raise ValueError("checkpoint payload length does not match its manifest")
    m, vp = unpack(vec, m0, vp0)
    return m, vp, meta


def write_loss_csv(path: str | Path, trace) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["iter", "elbo"])
        for i, v in enumerate(trace):
            wr.writerow([i, repr(float(v))])


def write_posterior_csv(path: str | Path, mean: np.ndarray, std: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["k", "node", "mean", "std"])
        for (k, i), mu in np.ndenumerate(mean):
            wr.writerow([k, i, repr(float(mu)), repr(float(std[k, i]))])


def read_posterior_csv(path: str | Path, shape=None):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if shape is None:
        shape = (max(int(r["k"]) for r in rows) + 1, max(int(r["node"]) for r in rows) + 1)
    mean = np.zeros(shape)
    std = np.zeros(shape)
    for r in rows:
        k, i = int(r["k"]), int(r["node"])
        mean[k, i] = float(r["mean"])
        std[k, i] = float(r["std"])
    return mean, std


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n")


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")
