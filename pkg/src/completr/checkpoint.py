"""Deterministic, versioned checkpoint container.

Layout: 8-byte magic, u32 major, u32 minor, u64 header length, JSON header
(sorted keys), then raw little-endian tensor blobs in sorted-name order.
Identical inputs always produce identical bytes. Loaders accept any minor
version within the same major and ignore unknown header fields.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import IncompatibleCheckpointError, IOFailureError

MAGIC = b"CPLTCKPT"
MAJOR = 1
MINOR = 0

_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
    torch.int32: "<i4",
    torch.uint8: "|u1",
    torch.bool: "|b1",
}
_TORCH_DTYPES = {v: k for k, v in _DTYPES.items()}


@dataclass
class Checkpoint:
    config: dict
    meta: dict
    tensors: dict[str, torch.Tensor]
    optimizer_groups: list | None = None
    rng_state: bytes | None = None
    extra: dict = field(default_factory=dict)

    def model_state(self) -> dict[str, torch.Tensor]:
        return {
            k[len("model.") :]: v for k, v in self.tensors.items() if k.startswith("model.")
        }

    def state_hash(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.tensors):
            h.update(name.encode())
            h.update(self.tensors[name].numpy().tobytes())
        return h.hexdigest()


def _tensor_bytes(t: torch.Tensor) -> bytes:
    return t.detach().cpu().contiguous().numpy().tobytes()


def save_checkpoint(
    path: str | os.PathLike,
    tensors: dict[str, torch.Tensor],
    config: dict,
    meta: dict,
    optimizer_groups: list | None = None,
    rng_state: bytes | None = None,
) -> None:
    entries = {}
    offset = 0
    blobs = []
    for name in sorted(tensors):
        t = tensors[name].detach().cpu().contiguous()
        if t.dtype not in _DTYPES:
            raise IncompatibleCheckpointError(f"unsupported tensor dtype {t.dtype} for {name}")
        raw = _tensor_bytes(t)
        entries[name] = {
            "dtype": _DTYPES[t.dtype],
            "shape": list(t.shape),
            "offset": offset,
            "nbytes": len(raw),
        }
        offset += len(raw)
        blobs.append(raw)
    header = {
        "config": config,
        "meta": meta,
        "optimizer_groups": optimizer_groups,
        "rng": rng_state.hex() if rng_state is not None else None,
        "tensors": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<II", MAJOR, MINOR))
            fh.write(struct.pack("<Q", len(header_bytes)))
            fh.write(header_bytes)
            for raw in blobs:
                fh.write(raw)
    except OSError as exc:
        raise IOFailureError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IOFailureError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(data) < 24 or data[:8] != MAGIC:
        raise IncompatibleCheckpointError(f"{path}: not a checkpoint file")
    major, _minor = struct.unpack("<II", data[8:16])
    if major != MAJOR:
        raise IncompatibleCheckpointError(
            f"{path}: major version {major} unsupported (expected {MAJOR})"
        )
    (header_len,) = struct.unpack("<Q", data[16:24])
    header = json.loads(data[24 : 24 + header_len].decode("utf-8"))
    payload = data[24 + header_len :]
    tensors = {}
    for name, entry in header["tensors"].items():
        dtype = _TORCH_DTYPES.get(entry["dtype"])
        if dtype is None:
            raise IncompatibleCheckpointError(f"{path}: unknown dtype {entry['dtype']}")
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).copy()
        tensors[name] = torch.from_numpy(arr).reshape(entry["shape"]).to(dtype)
    rng = bytes.fromhex(header["rng"]) if header.get("rng") else None
    known = {"config", "meta", "optimizer_groups", "rng", "tensors"}
    return Checkpoint(
        config=header.get("config", {}),
        meta=header.get("meta", {}),
        tensors=tensors,
        optimizer_groups=header.get("optimizer_groups"),
        rng_state=rng,
        extra={k: v for k, v in header.items() if k not in known},
    )


def pack_model(net: torch.nn.Module) -> dict[str, torch.Tensor]:
    return {f"model.{k}": v for k, v in net.state_dict().items()}


def pack_optimizer(optimizer: torch.optim.Optimizer) -> tuple[dict[str, torch.Tensor], list]:
    """Flatten optimizer.state_dict() into named tensors + JSON-safe groups."""
    sd = optimizer.state_dict()
    tensors: dict[str, torch.Tensor] = {}
    for idx, state in sd["state"].items():
        for key, value in state.items():
            if isinstance(value, torch.Tensor):
                tensors[f"opt.{idx}.{key}"] = value
            else:
                tensors[f"opt.{idx}.{key}"] = torch.tensor(float(value), dtype=torch.float64)
    groups = [
        {k: (list(v) if isinstance(v, (tuple, list)) else v) for k, v in g.items()}
        for g in sd["param_groups"]
    ]
    return tensors, groups


def restore_optimizer(optimizer: torch.optim.Optimizer, ckpt: Checkpoint) -> None:
    """Load flattened optimizer state back; groups must match construction."""
    if ckpt.optimizer_groups is None:
        return
    state: dict[int, dict] = {}
    for name, tensor in ckpt.tensors.items():
        if not name.startswith("opt."):
            continue
        _, idx, key = name.split(".", 2)
        state.setdefault(int(idx), {})[key] = tensor
    groups = []
    for saved in ckpt.optimizer_groups:
        g = dict(saved)
        if "betas" in g:
            g["betas"] = tuple(g["betas"])
        groups.append(g)
    optimizer.load_state_dict({"state": state, "param_groups": groups})


def generator_state_bytes(generator: torch.Generator) -> bytes:
    return bytes(generator.get_state().numpy().tobytes())


def restore_generator(rng_state: bytes) -> torch.Generator:
    g = torch.Generator()
    g.set_state(torch.tensor(bytearray(rng_state), dtype=torch.uint8))
    return g
