"""Policy checkpoint files.

Binary layout, all little-endian::

    offset  size  field
    0       4     magic b"IWDP"
    4       4     uint32 format version (1)
    8       4     uint32 obs_dim
    12      4     uint32 act_dim
    16      4     uint32 number of hidden layers H
    20      4*H   uint32 hidden widths
    ..      8*A   float64 action low bounds  (A = act_dim)
    ..      8*A   float64 action high bounds
    ..      8     uint64 parameter count P
    ..      8*P   float64 flat parameter vector (see :mod:`iwdrift.policy`)

A JSON sidecar ``<file>.json`` holds the trainer configuration and run
metadata. Files are written to a temporary name and renamed, so an
interrupted run never leaves a truncated checkpoint behind.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .policy import HIDDEN, PolicyNet, param_count

MAGIC = b"IWDP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def atomic_write(path, data: bytes):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def encode(net: PolicyNet) -> bytes:
    head = MAGIC + struct.pack("<4I", VERSION, net.obs_dim, net.act_dim, len(HIDDEN))
    head += struct.pack(f"<{len(HIDDEN)}I", *HIDDEN)
    body = (net.low.astype("<f8").tobytes() + net.high.astype("<f8").tobytes()
            + struct.pack("<Q", net.params.size) + net.params.astype("<f8").tobytes())
    return head + body


def decode(data: bytes) -> PolicyNet:
    if len(data) < 20 or data[:4] != MAGIC:
        raise CheckpointError("not a policy checkpoint (bad magic)")
    version, obs_dim, act_dim, n_hidden = struct.unpack_from("<4I", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 20
    try:
        hidden = struct.unpack_from(f"<{n_hidden}I", data, off)
        off += 4 * n_hidden
        if tuple(hidden) != HIDDEN:
            raise CheckpointError(f"hidden layers {hidden} do not match {HIDDEN}")
        low = np.frombuffer(data, "<f8", act_dim, off)
        off += 8 * act_dim
        high = np.frombuffer(data, "<f8", act_dim, off)
        off += 8 * act_dim
        (count,) = struct.unpack_from("<Q", data, off)
        off += 8
        if count != param_count(obs_dim, act_dim):
            raise CheckpointError("parameter count does not match layer dimensions")
        params = np.frombuffer(data, "<f8", count, off)
        off += 8 * count
    except (struct.error, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"truncated checkpoint: {exc}") from exc
    if off != len(data):
        raise CheckpointError("trailing bytes after parameter vector")
    return PolicyNet(obs_dim, act_dim, low.astype(np.float64), high.astype(np.float64),
                     params.astype(np.float64))


def save(path, net: PolicyNet, meta: dict | None = None) -> Path:
    path = Path(path)
    atomic_write(path, encode(net))
    atomic_write(path.with_name(path.name + ".json"),
                 (json.dumps(meta or {}, indent=2, sort_keys=True) + "\n").encode())
    return path


def load(path, obs_dim: int | None = None, act_dim: int | None = None) -> PolicyNet:
    net = decode(Path(path).read_bytes())
    if obs_dim is not None and net.obs_dim != obs_dim:
        raise CheckpointError(f"checkpoint expects obs_dim {net.obs_dim}, environment has {obs_dim}")
    if act_dim is not None and net.act_dim != act_dim:
        raise CheckpointError(f"checkpoint expects act_dim {net.act_dim}, environment has {act_dim}")
    return net


def load_meta(path) -> dict:
    side = Path(path).with_name(Path(path).name + ".json")
    return json.loads(side.read_text()) if side.exists() else {}
