"""Single-file checkpoint container with bit-exact round-tripping.

Layout: 4-byte magic, u32 format version, u64 header length, UTF-8 JSON
header, then each array's raw little-endian bytes at the offsets the header
records. Arrays keep their dtype tag (float32 training, float64
verification runs, integer counters), so reload reproduces training state
bit for bit. The embedded architecture digest refuses weights from a
mismatched network.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .errors import CheckpointError

MAGIC = b"STCK"
FORMAT_VERSION = 1

_ALLOWED_DTYPES = {"<f4", "<f8", "<i4", "<i8", "<u4", "<u8"}


@dataclass
class Checkpoint:
    """Everything needed to resume or evaluate a run."""

    encoder_digest: str
    epoch: int
    arrays: Dict[str, np.ndarray]  # model parameters and buffers
    optimizer: Dict[str, np.ndarray] = field(default_factory=dict)
    scalars: dict = field(default_factory=dict)  # JSON-able counters/config echo
    rng_state: Optional[dict] = None


def _canonical(arr):
    a = np.ascontiguousarray(arr)
    tag = a.dtype.newbyteorder("<").str
    if tag not in _ALLOWED_DTYPES:
        raise CheckpointError(f"unsupported array dtype {a.dtype}")
    return a.astype(tag, copy=False)


def save_checkpoint(ckpt, path):
    """Write the container; byte-identical for equal contents."""
    entries = []
    blobs = []
    offset = 0
    for section, table in (("arrays", ckpt.arrays), ("optimizer", ckpt.optimizer)):
        for name in sorted(table):
            a = _canonical(table[name])
            raw = a.tobytes()
            entries.append(
                {
                    "section": section,
                    "name": name,
                    "dtype": a.dtype.newbyteorder("<").str,
                    "shape": list(a.shape),
                    "offset": offset,
                    "nbytes": len(raw),
                }
            )
            blobs.append(raw)
            offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "encoder_digest": ckpt.encoder_digest,
        "epoch": int(ckpt.epoch),
        "scalars": ckpt.scalars,
        "rng_state": ckpt.rng_state,
        "entries": entries,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.array(FORMAT_VERSION, dtype="<u4").tobytes())
        fh.write(np.array(len(head), dtype="<u8").tobytes())
        fh.write(head)
        for raw in blobs:
            fh.write(raw)
    return path


def load_checkpoint(path, expected_digest=None):
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(data) < 16 or data[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file (bad magic)")
    version = int(np.frombuffer(data[4:8], dtype="<u4")[0])
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path} has format version {version}, expected {FORMAT_VERSION}"
        )
    head_len = int(np.frombuffer(data[8:16], dtype="<u8")[0])
    try:
        header = json.loads(data[16 : 16 + head_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path} has a corrupt header: {exc}") from exc
    base = 16 + head_len
    arrays, optimizer = {}, {}
    for e in header["entries"]:
        if e["dtype"] not in _ALLOWED_DTYPES:
            raise CheckpointError(f"{path}: entry {e['name']} has dtype {e['dtype']}")
        start = base + e["offset"]
        stop = start + e["nbytes"]
        if stop > len(data):
            raise CheckpointError(f"{path} is truncated at entry {e['name']}")
        arr = np.frombuffer(data[start:stop], dtype=e["dtype"]).reshape(e["shape"]).copy()
        (arrays if e["section"] == "arrays" else optimizer)[e["name"]] = arr
    ckpt = Checkpoint(
        encoder_digest=header["encoder_digest"],
        epoch=header["epoch"],
        arrays=arrays,
        optimizer=optimizer,
        scalars=header.get("scalars", {}),
        rng_state=header.get("rng_state"),
    )
    if expected_digest is not None and ckpt.encoder_digest != expected_digest:
        raise CheckpointError(
            f"{path} was written for architecture {ckpt.encoder_digest[:12]}..., "
            f"this run expects {expected_digest[:12]}..."
        )
    return ckpt
