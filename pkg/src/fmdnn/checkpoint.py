"""Binary checkpoint format.

Layout (little-endian)::

    b"FMDN"  u32 version
    u32 n  config text (n bytes, utf-8, ``key = value`` lines)
    u32 n  metadata (n bytes, utf-8 JSON: epoch, history)
    u32 count
    count x [u32 n  name (n bytes)  u32 rank  rank x u32 dims  f32 payload]
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import Config, parse_config_text
from .errors import ConfigError, FormatError

MAGIC = b"FMDN"
VERSION = 1


@dataclass
class Checkpoint:
    config: Config
    params: dict[str, np.ndarray]
    epoch: int = 0
    history: list[dict] = field(default_factory=list)

    @classmethod
    def from_model(cls, model, epoch: int = 0, history=None) -> "Checkpoint":
        params = {name: p.data.astype(np.float32) for name, p in model.named_parameters()}
        return cls(model.config.copy(), params, epoch, list(history or []))

    def build_model(self):
        from .fca import FMDNN

        model = FMDNN(self.config.copy())
        load_into(model, self.params)
        return model


def load_into(model, params: dict[str, np.ndarray]) -> None:
    """Copy stored parameters into ``model``; names and shapes must match exactly."""
    named = dict(model.named_parameters())
    missing = sorted(set(named) - set(params))
    extra = sorted(set(params) - set(named))
    if missing or extra:
        raise FormatError(f"parameter names differ: missing {missing[:5]}, unexpected {extra[:5]}")
    for name, p in named.items():
        if params[name].shape != p.shape:
            raise FormatError(f"{name}: stored shape {params[name].shape} != model shape {p.shape}")
        p.data[...] = params[name].astype(np.float64)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    config_bytes = ckpt.config.to_text().encode()
    meta_bytes = json.dumps({"epoch": ckpt.epoch, "history": ckpt.history}).encode()
    out = [MAGIC, struct.pack("<I", VERSION)]
    for blob in (config_bytes, meta_bytes):
        out += [struct.pack("<I", len(blob)), blob]
    out.append(struct.pack("<I", len(ckpt.params)))
    for name, arr in ckpt.params.items():
        arr = np.asarray(arr, dtype="<f4")
        nb = name.encode()
        out += [struct.pack("<I", len(nb)), nb, struct.pack("<I", arr.ndim),
                struct.pack(f"<{arr.ndim}I", *arr.shape), arr.tobytes()]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(b"".join(out))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"checkpoint truncated at byte {len(self.buf)} (needed {self.pos + n})")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> Checkpoint:
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise FormatError(f"{path}: not an FMDN checkpoint (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        config = parse_config_text(r.take(r.u32()).decode()).validate()
        meta = json.loads(r.take(r.u32()).decode())
    except (UnicodeDecodeError, json.JSONDecodeError, ConfigError) as exc:
        raise FormatError(f"{path}: corrupt header: {exc}") from exc
    params = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode()
        rank = r.u32()
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        params[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(r.buf):
        raise FormatError(f"{path}: {len(r.buf) - r.pos} trailing bytes")
    ckpt = Checkpoint(config, params, int(meta.get("epoch", 0)), list(meta.get("history", [])))
    # shape check against the architecture the config describes
    from .fca import FMDNN

    expected = {n: p.shape for n, p in FMDNN(config.copy()).named_parameters()}
    if set(expected) != set(params) or any(expected[n] != params[n].shape for n in params):
        raise FormatError(f"{path}: parameters do not match the stored config")
    return ckpt
