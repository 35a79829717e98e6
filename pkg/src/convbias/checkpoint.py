"""Binary checkpoints.

Layout::

    b"SCLB" | u32 version | u32 header length | JSON header | tensor blobs

The JSON header holds the architecture spec, optimizer config and step,
RNG states and a tensor index (name, kind, dtype, shape, byte offset into
the blob section). Tensors are stored little-endian, float32 for the
production path.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .architectures import ArchSpec, build
from .optim import OptimizerConfig, OptimizerState

MAGIC = b"SCLB"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    spec: ArchSpec
    network: object
    opt_config: OptimizerConfig | None = None
    opt_state: OptimizerState | None = None
    rng_state: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def _le(arr):
    return np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))


def save_checkpoint(path, spec, network, opt_config=None, opt_state=None,
                    rng_state=None, extra=None):
    """Write atomically: the previous file at ``path`` survives a failed write."""
    tensors = []
    blobs = []
    offset = 0

    def add(name, kind, arr):
        nonlocal offset
        data = _le(arr).tobytes()
        tensors.append({"name": name, "kind": kind, "dtype": arr.dtype.str.lstrip("<>=|"),
                        "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)

    for name, p in network.params.items():
        add(name, "param", p.value)
    for name, buf in network.buffers().items():
        add(name, "buffer", buf)
    if opt_state is not None:
        for name, v in opt_state.velocity.items():
            add(name, "velocity", v)

    header = {
        "arch": spec.to_dict(),
        "dtype": network.dtype.str,
        "seed": network.seed,
        "optimizer": asdict(opt_config) if opt_config is not None else None,
        "step": opt_state.step if opt_state is not None else None,
        "rng": {"dropout": network.dropout_states(), **(rng_state or {})},
        "extra": extra or {},
        "tensors": tensors,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(head)))
        fh.write(head)
        for b in blobs:
            fh.write(b)
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic {raw[:4]!r})")
    if len(raw) < 12:
        raise CheckpointError(f"{path}: truncated header")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    base = 12 + hlen

    spec = ArchSpec.from_dict(header["arch"])
    network = build(spec, seed=header["seed"], dtype=np.dtype(header["dtype"]))
    arrays, velocity = {}, {}
    for t in header["tensors"]:
        start = base + t["offset"]
        chunk = raw[start:start + t["nbytes"]]
        if len(chunk) != t["nbytes"]:
            raise CheckpointError(f"{path}: tensor {t['name']} truncated")
        arr = np.frombuffer(chunk, dtype=np.dtype("<" + t["dtype"])).reshape(t["shape"])
        (velocity if t["kind"] == "velocity" else arrays)[t["name"]] = arr
    network.load_state_arrays(arrays)
    rng = dict(header.get("rng") or {})
    network.set_dropout_states(rng.pop("dropout", {}))

    opt_config = opt_state = None
    if header.get("optimizer") is not None:
        opt_config = OptimizerConfig(**header["optimizer"])
    if header.get("step") is not None:
        opt_state = OptimizerState(step=header["step"],
                                   velocity={k: v.astype(network.dtype) for k, v in velocity.items()})
    return Checkpoint(spec, network, opt_config, opt_state, rng, header.get("extra", {}))
