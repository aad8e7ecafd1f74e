"""Named parameter store, seeded initialisation and the checkpoint container.

Checkpoint layout (all integers little-endian)::

    magic        8 bytes   b"IGNNCKPT"
    version      uint8     1
    header_len   uint32
    header       JSON, utf-8: {"config", "config_hash", "extra",
                               "params": [{"name", "shape"}, ...]}
    payload      float64 little-endian, parameters in header order
"""
from __future__ import annotations

import hashlib
import json
import struct
import zlib
from pathlib import Path
from typing import Iterator

import numpy as np

from .tensor import Tensor

MAGIC = b"IGNNCKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def param_rng(seed: int, name: str) -> np.random.Generator:
    """Independent Philox stream per (seed, parameter name)."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])
    return np.random.Generator(np.random.Philox(ss))


class ParameterStore:
    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        t.zero_grad()
        self._params[name] = t
        return t

    def glorot(self, name: str, fan_in: int, fan_out: int, seed: int) -> Tensor:
        a = np.sqrt(6.0 / (fan_in + fan_out))
        return self.add(name, param_rng(seed, name).uniform(-a, a, size=(fan_in, fan_out)))

    def zeros(self, name: str, *shape: int) -> Tensor:
        return self.add(name, np.zeros(shape))

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for name in self.names():
            yield name, self._params[name]

    def with_prefix(self, prefix: str) -> list[str]:
        return [n for n in self.names() if n.startswith(prefix)]

    @property
    def num_params(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.items()}

    def restore(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self._params):
            missing = sorted(set(self._params) ^ set(arrays))
            raise KeyError(f"parameter sets differ: {missing}")
        for n, arr in arrays.items():
            t = self._params[n]
            if arr.shape != t.shape:
                raise ValueError(f"{n}: shape {arr.shape} != {t.shape}")
            t.data = np.array(arr, dtype=np.float64)

    # -- checkpoint I/O -----------------------------------------------------

    def save(self, path: str | Path, config: dict, extra: dict | None = None) -> None:
        header = {
            "config": config,
            "config_hash": config_hash(config),
            "extra": extra or {},
            "params": [{"name": n, "shape": list(t.shape)} for n, t in self.items()],
        }
        hbytes = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<BI", CHECKPOINT_VERSION, len(hbytes)))
            fh.write(hbytes)
            for _, t in self.items():
                fh.write(t.data.astype("<f8").tobytes())

    @staticmethod
    def read(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
        """Return (header, arrays) from a checkpoint file."""
        raw = Path(path).read_bytes()
        if raw[:8] != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        version, hlen = struct.unpack("<BI", raw[8:13])
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        header = json.loads(raw[13:13 + hlen].decode())
        if config_hash(header["config"]) != header["config_hash"]:
            raise CheckpointError(f"{path}: config hash does not match stored config")
        pos = 13 + hlen
        arrays = {}
        for spec in header["params"]:
            n = int(np.prod(spec["shape"], dtype=np.int64))
            chunk = raw[pos:pos + 8 * n]
            if len(chunk) != 8 * n:
                raise CheckpointError(f"{path}: truncated payload at {spec['name']}")
            arrays[spec["name"]] = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(spec["shape"])
            pos += 8 * n
        if pos != len(raw):
            raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
        return header, arrays
