"""Checkpoint files: a ``key=value`` manifest plus a raw float64 blob.

``model.ckpt`` holds the manifest; ``model.ckpt.bin`` holds every tensor as
little-endian float64 in the order the manifest lists them. Loading checks
that the blob size matches the declared shapes exactly.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT = "gesturegen-checkpoint/1"


class CheckpointError(ValueError):
    pass


def blob_path(path: str | os.PathLike) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".bin")


def format_floats(values) -> str:
    return ",".join(repr(float(v)) for v in np.ravel(values))


def parse_floats(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",")], dtype=np.float64) if text else np.zeros(0)


@dataclass
class Checkpoint:
    meta: dict[str, str] = field(default_factory=dict)
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def save(self, path: str | os.PathLike) -> None:
        lines = [f"format={FORMAT}"]
        for key, value in self.meta.items():
            value = str(value)
            if "\n" in value or "=" in key:
                raise CheckpointError(f"manifest entry {key!r} cannot be encoded")
            lines.append(f"{key}={value}")
        chunks = []
        for name, arr in self.tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            shape = "x".join(str(d) for d in arr.shape) if arr.ndim else "scalar"
            lines.append(f"tensor.{name}={shape}")
            chunks.append(arr.tobytes())
        blob = b"".join(chunks)
        lines.append(f"blob_bytes={len(blob)}")
        path = Path(path)
        _atomic_write(blob_path(path), blob)
        _atomic_write(path, ("\n".join(lines) + "\n").encode())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Checkpoint":
        path = Path(path)
        if not path.exists():
            raise CheckpointError(f"checkpoint {path} does not exist")
        meta: dict[str, str] = {}
        shapes: list[tuple[str, tuple[int, ...]]] = []
        declared = None
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CheckpointError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            if key.startswith("tensor."):
                shape = () if value == "scalar" else tuple(int(d) for d in value.split("x") if d)
                shapes.append((key[len("tensor."):], shape))
            elif key == "blob_bytes":
                declared = int(value)
            else:
                meta[key] = value
        if meta.pop("format", None) != FORMAT:
            raise CheckpointError(f"{path}: not a {FORMAT} manifest")
        blob = blob_path(path).read_bytes()
        expected = sum(8 * int(np.prod(s)) for _, s in shapes)
        if declared != expected or len(blob) != expected:
            raise CheckpointError(
                f"{path}: blob has {len(blob)} bytes, manifest declares {declared}, shapes need {expected}"
            )
        tensors = {}
        offset = 0
        for name, shape in shapes:
            n = int(np.prod(shape))
            tensors[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(shape).astype(np.float64)
            offset += 8 * n
        return cls(meta, tensors)


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
