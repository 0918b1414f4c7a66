"""Binary dataset storage.

Layout: magic ``IGMD``, u32 version, u32 header length, UTF-8 JSON header,
then per record: float32 coordinates (T*V*C), bit-packed mask
(ceil(T*V/8) bytes), u16 label. All integers little-endian. Coordinates
are stored at float32 precision.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from .data import DatasetManifest, SkeletonSequence
from .errors import FormatError

MAGIC = b"IGMD"
VERSION = 1


def _manifest_for(sequences: list[SkeletonSequence], manifest: DatasetManifest | None) -> DatasetManifest:
    num_classes = max(s.label for s in sequences) + 1
    if manifest is None:
        return DatasetManifest(
            name="unnamed", num_classes=num_classes, num_samples=len(sequences),
            split="train", seed=0,
        )
    if manifest.num_samples != len(sequences):
        raise FormatError(
            f"manifest declares {manifest.num_samples} samples, got {len(sequences)}"
        )
    return manifest


def save_dataset(
    path: str | Path,
    sequences: list[SkeletonSequence],
    manifest: DatasetManifest | None = None,
) -> None:
    if not sequences:
        raise FormatError("refusing to save an empty dataset")
    first = sequences[0]
    frames, joints, channels = first.data.shape
    for i, seq in enumerate(sequences):
        if seq.data.shape != (frames, joints, channels):
            raise FormatError(f"record {i}: shape {seq.data.shape} differs from {first.data.shape}")
        seq.validate()
    manifest = _manifest_for(sequences, manifest)

    header = {
        "manifest": dataclasses.asdict(manifest),
        "frames": frames,
        "joints": joints,
        "channels": channels,
        "num_classes": manifest.num_classes,
        "num_samples": len(sequences),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for seq in sequences:
            fh.write(seq.data.astype("<f4").tobytes())
            fh.write(np.packbits(seq.mask.reshape(-1)).tobytes())
            fh.write(struct.pack("<H", seq.label))


def _read_exact(fh, n: int, what: str) -> bytes:
    offset = fh.tell()
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated {what} at byte offset {offset}")
    return buf


def load_dataset(path: str | Path) -> tuple[list[SkeletonSequence], DatasetManifest]:
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

        frames, joints, channels = header["frames"], header["joints"], header["channels"]
        num_samples = header["num_samples"]
        num_classes = header["num_classes"]
        manifest = DatasetManifest(**header["manifest"])
        if manifest.num_samples != num_samples:
            raise FormatError("manifest sample count disagrees with header")

        data_bytes = frames * joints * channels * 4
        mask_bytes = (frames * joints + 7) // 8
        sequences = []
        for i in range(num_samples):
            data = np.frombuffer(
                _read_exact(fh, data_bytes, f"record {i}"), dtype="<f4"
            ).astype(np.float64).reshape(frames, joints, channels)
            bits = np.frombuffer(_read_exact(fh, mask_bytes, f"record {i}"), dtype=np.uint8)
            mask = np.unpackbits(bits)[: frames * joints].astype(bool).reshape(frames, joints)
            (label,) = struct.unpack("<H", _read_exact(fh, 2, f"record {i}"))
            if label >= num_classes:
                raise FormatError(
                    f"record {i}: label {label} out of range [0, {num_classes})"
                )
            seq = SkeletonSequence(data, mask, int(label))
            if not np.isfinite(data).all() or np.any(data[~mask] != 0.0):
                raise FormatError(f"record {i}: corrupt coordinate payload")
            sequences.append(seq)
        trailing = fh.read(1)
        if trailing:
            raise FormatError(f"trailing bytes at byte offset {fh.tell() - 1}")
    return sequences, manifest
