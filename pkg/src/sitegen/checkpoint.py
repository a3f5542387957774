"""Checkpoint files: a length-prefixed JSON header followed by the raw
little-endian float64 arrays in header directory order.

Layout: ASCII decimal byte count of the header, a newline, the canonical
JSON header, then the array payload.  Per parameter three arrays are stored
in sequence: value, Adam first moment, Adam second moment.
"""

from __future__ import annotations

import json

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _canonical(header):
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode()


def save_checkpoint(path, params, config=None, epoch=0, rng_state=None):
    """params: list of autodiff Parameters (sorted by name upstream)."""
    directory = []
    payload = []
    for p in sorted(params, key=lambda p: p.name):
        directory.append(
            {"name": p.name, "shape": list(p.node.value.shape), "step": p.step}
        )
        for arr in (p.node.value, p.m, p.v):
            payload.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    header = {
        "version": FORMAT_VERSION,
        "config": config or {},
        "epoch": epoch,
        "rng": rng_state,
        "arrays": directory,
    }
    blob = _canonical(header)
    with open(path, "wb") as fh:
        fh.write(str(len(blob)).encode() + b"\n")
        fh.write(blob)
        for chunk in payload:
            fh.write(chunk)


def read_header(path):
    with open(path, "rb") as fh:
        prefix = fh.readline()
        try:
            n = int(prefix)
        except ValueError:
            raise CheckpointError(f"bad header length prefix in {path}")
        header = json.loads(fh.read(n).decode())
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint version {header.get('version')} != {FORMAT_VERSION}"
        )
    return header


def load_checkpoint(path, params):
    """Restore arrays into an existing parameter list; names and shapes must
    match exactly.  Returns the header (config, epoch, rng state)."""
    header = read_header(path)
    by_name = {p.name: p for p in params}
    names = sorted(by_name)
    stored = [e["name"] for e in header["arrays"]]
    if stored != names:
        missing = set(names) ^ set(stored)
        raise CheckpointError(f"parameter name mismatch: {sorted(missing)[:5]}")
    with open(path, "rb") as fh:
        n = int(fh.readline())
        fh.read(n)
        for entry in header["arrays"]:
            p = by_name[entry["name"]]
            shape = tuple(entry["shape"])
            if shape != p.node.value.shape:
                raise CheckpointError(
                    f"shape mismatch for {entry['name']}: {shape} vs {p.node.value.shape}"
                )
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            for target in ("value", "m", "v"):
                arr = np.frombuffer(fh.read(count * 8), dtype="<f8").reshape(shape).copy()
                if target == "value":
                    p.node.value = arr
                else:
                    setattr(p, target, arr)
            p.step = entry["step"]
    return header


def rng_state(rng):
    """JSON-serializable state of a numpy Generator."""
    state = rng.bit_generator.state
    return json.loads(json.dumps(state, default=int))


def restore_rng(state):
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng
