"""Named parameter store with deterministic initialisation and RKW1 files.

Each parameter is initialised from its own RNG keyed by (global seed,
parameter name), so construction order never changes the weights.

RKW1 file layout: an ASCII first line ``RKW1 manifest=<nbytes>``, the JSON
manifest, then the little-endian raw payload of all parameters at the byte
offsets the manifest records. The interchange payload is 32-bit; training
checkpoints may request the 64-bit payload so a resumed run reproduces the
next loss bit-exactly.
"""
from __future__ import annotations

import hashlib
import json
import math

import numpy as np

from ..errors import ContractError, FormatError
from .tensor import Tensor

_MAGIC = b"RKW1"


def seed_for(global_seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{global_seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def init_array(global_seed: int, name: str, shape: tuple, kind: str, fan_in: int | None = None) -> np.ndarray:
    rng = np.random.default_rng(seed_for(global_seed, name))
    if kind == "zeros":
        return np.zeros(shape)
    if kind == "ones":
        return np.ones(shape)
    if kind == "kaiming":
        if fan_in is None:
            fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
        return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)
    if kind == "xavier":
        if fan_in is None:
            fan_in = shape[0]
        bound = math.sqrt(1.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape)
    raise ContractError(f"unknown init kind {kind!r}")


class ParameterStore:
    """name -> Tensor map plus the manifest needed to reproduce it."""

    def __init__(self, seed: int = 0, hyper: dict | None = None):
        self.seed = int(seed)
        self.hyper = dict(hyper or {})
        self._tensors: dict[str, Tensor] = {}

    def parameter(self, name: str, shape: tuple, kind: str = "kaiming",
                  fan_in: int | None = None, trainable: bool = True) -> Tensor:
        """Fetch or deterministically create a named parameter."""
        if name in self._tensors:
            t = self._tensors[name]
            if t.shape != tuple(shape):
                raise ContractError(f"parameter {name} exists with shape {t.shape}, requested {shape}")
            return t
        t = Tensor(init_array(self.seed, name, tuple(shape), kind, fan_in), requires_grad=trainable)
        self._tensors[name] = t
        return t

    def put(self, name: str, value: np.ndarray, trainable: bool = False) -> Tensor:
        if name in self._tensors:
            raise ContractError(f"parameter {name} already exists")
        t = Tensor(np.asarray(value, dtype=np.float64), requires_grad=trainable)
        self._tensors[name] = t
        return t

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def names(self) -> list[str]:
        return sorted(self._tensors)

    def trainable(self) -> list[Tensor]:
        return [self._tensors[n] for n in self.names() if self._tensors[n].requires_grad]

    def trainable_items(self) -> list[tuple[str, Tensor]]:
        return [(n, self._tensors[n]) for n in self.names() if self._tensors[n].requires_grad]

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.zero_grad()

    # -- serialization

    def save(self, path, dtype: str = "f32") -> None:
        if dtype not in ("f32", "f64"):
            raise ContractError(f"unsupported payload dtype {dtype!r}")
        np_dtype = "<f4" if dtype == "f32" else "<f8"
        itemsize = 4 if dtype == "f32" else 8
        entries = []
        offset = 0
        for name in self.names():
            t = self._tensors[name]
            entries.append({
                "name": name,
                "shape": list(t.shape),
                "offset": offset,
                "trainable": t.requires_grad,
            })
            offset += t.size * itemsize
        manifest = {
            "version": "RKW1",
            "dtype": dtype,
            "seed": self.seed,
            "hyper": self.hyper,
            "params": entries,
        }
        mbytes = json.dumps(manifest, sort_keys=True).encode("ascii")
        with open(path, "wb") as fh:
            fh.write(_MAGIC + f" manifest={len(mbytes)}\n".encode("ascii"))
            fh.write(mbytes)
            for name in self.names():
                fh.write(np.ascontiguousarray(self._tensors[name].data, dtype=np_dtype).tobytes())

    @classmethod
    def load(cls, path) -> "ParameterStore":
        with open(path, "rb") as fh:
            head = fh.readline()
            if not head.startswith(_MAGIC + b" manifest="):
                raise FormatError(f"{path}: not an RKW1 weight file")
            try:
                mlen = int(head.split(b"=", 1)[1])
            except ValueError:
                raise FormatError(f"{path}: bad manifest length") from None
            manifest = json.loads(fh.read(mlen).decode("ascii"))
            payload = fh.read()
        dtype = manifest.get("dtype", "f32")
        np_dtype = "<f4" if dtype == "f32" else "<f8"
        itemsize = 4 if dtype == "f32" else 8
        store = cls(seed=manifest.get("seed", 0), hyper=manifest.get("hyper", {}))
        for entry in manifest["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            start = entry["offset"]
            chunk = payload[start : start + count * itemsize]
            if len(chunk) < count * itemsize:
                raise FormatError(f"{path}: payload truncated at parameter {entry['name']}")
            arr = np.frombuffer(chunk, dtype=np_dtype).astype(np.float64).reshape(shape)
            store.put(entry["name"], arr, trainable=entry.get("trainable", True))
        return store
