"""Flat, hierarchically named registry of parameter arrays.

Names use dots as separators (``adapter.core.layer0.attn.q.weight``). A
prefix selects a whole subtree: ``adapter.core`` matches the name itself
and every name below it, never ``adapter.core2``.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
import torch

from ..errors import FormatError, RegistrationError

CHECKPOINT_MAGIC = b"AFCK1"


def _matches(name: str, prefix: str) -> bool:
    return not prefix or name == prefix or name.startswith(prefix + ".")


@dataclass
class Entry:
    values: torch.Tensor
    frozen: bool = False

    @property
    def grad(self) -> torch.Tensor:
        g = self.values.grad
        return torch.zeros_like(self.values) if g is None else g


class ParamStore:
    """Single-writer parameter registry.

    Trainable entries are leaf tensors with ``requires_grad`` so autograd
    populates their gradients; frozen entries never participate.
    """

    def __init__(self, dtype: torch.dtype = torch.float32):
        self.dtype = dtype
        self._entries: dict[str, Entry] = {}

    def register(self, name: str, values, frozen: bool = False) -> torch.Tensor:
        if name in self._entries:
            raise RegistrationError(f"parameter {name!r} already registered")
        t = torch.as_tensor(values, dtype=self.dtype).detach().clone()
        t.requires_grad_(not frozen)
        self._entries[name] = Entry(t, frozen)
        return t

    def has_prefix(self, prefix: str) -> bool:
        return any(_matches(n, prefix) for n in self._entries)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __getitem__(self, name: str) -> torch.Tensor:
        return self._entries[name].values

    def __len__(self) -> int:
        return len(self._entries)

    def entry(self, name: str) -> Entry:
        return self._entries[name]

    def names(self, prefix: str = "", trainable_only: bool = False) -> list[str]:
        return [
            n
            for n, e in self._entries.items()
            if _matches(n, prefix) and not (trainable_only and e.frozen)
        ]

    def items(self, prefix: str = "", trainable_only: bool = False) -> Iterator[tuple[str, Entry]]:
        for n in self.names(prefix, trainable_only):
            yield n, self._entries[n]

    def set_frozen(self, prefix: str, frozen: bool = True) -> None:
        for _, e in self.items(prefix):
            e.frozen = frozen
            e.values.grad = None
            e.values.requires_grad_(not frozen)

    def freeze(self, prefix: str = "") -> None:
        self.set_frozen(prefix, True)

    def unfreeze(self, prefix: str = "") -> None:
        self.set_frozen(prefix, False)

    def zero_grad(self) -> None:
        for e in self._entries.values():
            e.values.grad = None

    def count(self, prefix: str = "", trainable_only: bool = False) -> int:
        return sum(e.values.numel() for _, e in self.items(prefix, trainable_only))

    def checksum(self, prefix: str = "") -> str:
        """SHA-256 over names and exact value bytes of the matching entries."""
        h = hashlib.sha256()
        for name in sorted(self.names(prefix)):
            h.update(name.encode())
            h.update(self._entries[name].values.detach().cpu().numpy().tobytes())
        return h.hexdigest()

    def astype(self, dtype: torch.dtype) -> "ParamStore":
        """Copy of this store in another precision, preserving frozen flags."""
        out = ParamStore(dtype)
        for name, e in self._entries.items():
            out.register(name, e.values.detach(), frozen=e.frozen)
        return out

    def load_values(self, values: dict[str, np.ndarray], prefix: str = "", strict: bool = True) -> None:
        """Copy arrays into already-registered entries (shapes must agree)."""
        wanted = set(self.names(prefix))
        if strict and wanted != set(values):
            missing = sorted(wanted - set(values))
            extra = sorted(set(values) - wanted)
            raise RegistrationError(f"checkpoint mismatch: missing={missing[:5]} extra={extra[:5]}")
        with torch.no_grad():
            for name, arr in values.items():
                if name not in wanted:
                    continue
                dst = self._entries[name].values
                if tuple(arr.shape) != tuple(dst.shape):
                    raise RegistrationError(f"shape mismatch for {name}: {arr.shape} vs {tuple(dst.shape)}")
                dst.copy_(torch.as_tensor(arr, dtype=self.dtype))

    def save(self, path, prefix: str = "") -> None:
        save_checkpoint(path, {n: e.values.detach().cpu().numpy() for n, e in self.items(prefix)})


def save_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    """Write arrays in the AFCK1 layout, entries in sorted name order."""
    chunks = [CHECKPOINT_MAGIC]
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f4")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:5] != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic", 0)
    pos = 5
    out: dict[str, np.ndarray] = {}

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError("truncated checkpoint", pos)
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    while pos < len(buf):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        out[name] = np.frombuffer(take(4 * count), dtype="<f4").reshape(dims).copy()
    return out
