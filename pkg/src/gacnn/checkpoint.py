"""Binary checkpoints (``.gkpt``) with a plain-text config sidecar (``.gkpt.cfg``).

Layout, all integers little-endian::

    8 bytes   magic  b"GKPT\\r\\n\\x1a\\n"
    u32       format version
    32 bytes  sha256 of the resolved config text
    u32       epoch
    u32       block count
    per block:
      u8      kind (0 parameter, 1 buffer, 2 optimizer velocity)
      u16     name length, then UTF-8 name
      u8      ndim, then ndim x u32 dims
      u64     payload length in bytes, then float32 payload
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import TrainConfig, parse_config_text
from .errors import CheckpointError
from .model import GACNN
from .training import OptimState

MAGIC = b"GKPT\r\n\x1a\n"
VERSION = 1
KINDS = {0: "param", 1: "buffer", 2: "velocity"}
_F32 = np.dtype("<f4")


@dataclass
class CheckpointData:
    version: int
    config_hash: bytes
    epoch: int
    blocks: dict[str, dict[str, np.ndarray]] = field(default_factory=lambda: {k: {} for k in KINDS.values()})


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".cfg")


def _block(kind: int, name: str, arr: np.ndarray) -> bytes:
    raw_name = name.encode()
    payload = np.ascontiguousarray(arr, dtype=_F32).tobytes()
    head = struct.pack("<BH", kind, len(raw_name)) + raw_name
    head += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + struct.pack("<Q", len(payload)) + payload


def save(model: GACNN, optim_state: OptimState | None, path: str | Path, epoch: int | None = None) -> Path:
    """Write ``path`` and its config sidecar; returns the checkpoint path."""
    path = Path(path)
    config = model.config
    blocks = [_block(0, n, p.data) for n, p in model.named_parameters()]
    blocks += [_block(1, n, b) for n, b in model.named_buffers()]
    if optim_state is not None:
        blocks += [_block(2, n, v) for n, v in sorted(optim_state.velocity.items())]
    if epoch is None:
        epoch = optim_state.epoch if optim_state is not None else 0
    header = MAGIC + struct.pack("<I", VERSION) + config.fingerprint() + struct.pack("<II", epoch, len(blocks))
    try:
        path.write_bytes(header + b"".join(blocks))
        sidecar_path(path).write_text(config.to_text())
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int, what: str) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise CheckpointError(
                f"truncated checkpoint {self.path}: {what} needs {n} bytes at offset {self.pos}, "
                f"found {len(self.data) - self.pos} (file length {len(self.data)}, expected at least {end})")
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def read_checkpoint(path: str | Path) -> CheckpointData:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    r = _Reader(raw, path)
    magic = r.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic {magic!r})")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} in {path} (this build reads {VERSION})")
    config_hash = r.take(32, "config hash")
    epoch, count = r.unpack("<II", "block count")
    out = CheckpointData(version, config_hash, epoch)
    for i in range(count):
        kind, name_len = r.unpack("<BH", f"block {i} header")
        if kind not in KINDS:
            raise CheckpointError(f"block {i} in {path} has unknown kind {kind}")
        name = r.take(name_len, f"block {i} name").decode()
        (ndim,) = r.unpack("<B", f"block {name} rank")
        shape = r.unpack(f"<{ndim}I", f"block {name} shape")
        (nbytes,) = r.unpack("<Q", f"block {name} length")
        expected = int(np.prod(shape, dtype=np.int64)) * _F32.itemsize
        if nbytes != expected:
            raise CheckpointError(f"block {name} in {path} declares {nbytes} bytes, shape {shape} needs {expected}")
        payload = r.take(nbytes, f"block {name} payload")
        out.blocks[KINDS[kind]][name] = np.frombuffer(payload, dtype=_F32).reshape(shape).astype(np.float32)
    if r.pos != len(raw):
        raise CheckpointError(f"{path} has {len(raw) - r.pos} trailing bytes after the last block")
    return out


def load(path: str | Path, config: TrainConfig | None = None,
         allow_config_mismatch: bool = False) -> tuple[GACNN, OptimState | None, int]:
    """Rebuild the model (and optimizer velocities, if stored) from a checkpoint.

    Without ``config`` the sidecar supplies it.  The stored config hash must
    match unless ``allow_config_mismatch`` is set.
    """
    path = Path(path)
    data = read_checkpoint(path)
    if config is None:
        side = sidecar_path(path)
        if not side.exists():
            raise CheckpointError(f"no config given and sidecar {side} is missing")
        config = parse_config_text(side.read_text())
    if config.fingerprint() != data.config_hash and not allow_config_mismatch:
        raise CheckpointError(f"config hash of {path} does not match the supplied config")

    model = GACNN(config)
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    for kind, targets in (("param", params), ("buffer", buffers)):
        stored = data.blocks[kind]
        for name, arr in stored.items():
            if name not in targets:
                raise CheckpointError(f"unknown {kind} block {name!r} in {path}")
        for name, target in targets.items():
            if name not in stored:
                raise CheckpointError(f"{path} lacks {kind} block {name!r}")
            arr = stored[name]
            dest = target.data if kind == "param" else target
            if arr.shape != dest.shape:
                raise CheckpointError(f"block {name!r} has shape {arr.shape}, model expects {dest.shape}")
            dest[...] = arr
    state = None
    if data.blocks["velocity"]:
        t = config.training
        state = OptimState(momentum=t.momentum, weight_decay=t.weight_decay, lr_backbone=t.lr_backbone,
                           lr_new=t.lr_new, epoch=data.epoch, total_epochs=t.epochs)
        for name, arr in data.blocks["velocity"].items():
            if name not in params:
                raise CheckpointError(f"velocity block {name!r} names no parameter")
            if arr.shape != params[name].shape:
                raise CheckpointError(f"velocity block {name!r} has shape {arr.shape}, "
                                      f"parameter is {params[name].shape}")
            state.velocity[name] = arr
    model.set_mode("inference")
    return model, state, data.epoch
