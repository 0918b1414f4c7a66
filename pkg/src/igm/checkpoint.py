"""Checkpoint storage.

Layout: magic ``IGMC``, u32 version, u32 header length, UTF-8 JSON
header, u32 array count, then per array: u32 name length, name, u32
ndim, u32 dims, float32 payload. Little-endian throughout; round-trips
are bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError

MAGIC = b"IGMC"
VERSION = 1


def save_checkpoint(path: str | Path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            array = np.ascontiguousarray(arrays[name], dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", array.ndim))
            fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
            fh.write(array.tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    offset = fh.tell()
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated {what} at byte offset {offset}")
    return buf


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "header")
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r} at byte offset 0, expected {MAGIC!r}")
        version, header_len = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if version != VERSION:
            raise FormatError(f"unsupported version {version} at byte offset 4")
        try:
            header = json.loads(_read_exact(fh, header_len, "header").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"unreadable JSON header at byte offset 12: {exc}") from exc
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "array count"))
        arrays: dict[str, np.ndarray] = {}
        for i in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, f"array {i} name"))
            name = _read_exact(fh, name_len, f"array {i} name").decode("utf-8")
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4, f"array {i} shape"))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, f"array {i} shape"))
            payload = _read_exact(fh, 4 * int(np.prod(shape, dtype=np.int64)), f"array {i} data")
            arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
        trailing = fh.read(1)
        if trailing:
            raise FormatError(f"trailing bytes at byte offset {fh.tell() - 1}")
    return header, arrays


def checkpoint_hash(path: str | Path) -> str:
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return digest[:16]


def module_arrays(module: torch.nn.Module, prefix: str) -> dict[str, np.ndarray]:
    return {
        f"{prefix}/{name}": tensor.detach().cpu().numpy()
        for name, tensor in module.state_dict().items()
    }


def load_module_arrays(module: torch.nn.Module, arrays: dict[str, np.ndarray], prefix: str) -> None:
    state = {}
    for name, tensor in module.state_dict().items():
        key = f"{prefix}/{name}"
        if key not in arrays:
            raise FormatError(f"checkpoint missing array {key!r}")
        state[name] = torch.as_tensor(arrays[key], dtype=tensor.dtype).reshape(tensor.shape)
    module.load_state_dict(state)


def optimizer_arrays(
    optimizer: torch.optim.Optimizer, named_params: list[tuple[str, torch.nn.Parameter]]
) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    for name, param in named_params:
        state = optimizer.state.get(param)
        if not state:
            continue
        for key in ("step", "exp_avg", "exp_avg_sq"):
            arrays[f"optim/{name}/{key}"] = state[key].detach().cpu().numpy()
    return arrays


def load_optimizer_arrays(
    optimizer: torch.optim.Optimizer,
    named_params: list[tuple[str, torch.nn.Parameter]],
    arrays: dict[str, np.ndarray],
) -> None:
    for name, param in named_params:
        step_key = f"optim/{name}/step"
        if step_key not in arrays:
            continue
        optimizer.state[param] = {
            "step": torch.as_tensor(arrays[step_key], dtype=torch.float32).reshape(()),
            "exp_avg": torch.as_tensor(arrays[f"optim/{name}/exp_avg"]).reshape(param.shape),
            "exp_avg_sq": torch.as_tensor(arrays[f"optim/{name}/exp_avg_sq"]).reshape(param.shape),
        }
