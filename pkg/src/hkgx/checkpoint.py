"""Versioned binary checkpoint format.

Layout: 8 magic bytes, u32 format version, u64 header length, UTF-8 JSON
header (configs, vocabulary hash, block manifest, counters), then raw
little-endian float64 blocks for parameters, decoder buffers and
optimizer moments, in manifest order.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .errors import ValidationError
from .model import TrainConfig

MAGIC = b"HKGXCKPT"
FORMAT_VERSION = 1


def config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def config_from_dict(cls, data: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValidationError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**data)


@dataclass
class Checkpoint:
    enc_cfg: EncoderConfig
    dec_cfg: DecoderConfig
    train_cfg: TrainConfig
    vocab_hash: str
    params: dict[str, np.ndarray]       # float64
    buffers: dict[str, np.ndarray]      # float64
    opt_state: dict[str, np.ndarray]    # float64 moment buffers
    opt_step: int
    step: int
    epoch: int
    best_valid_mrr: float | None


def _manifest(arrays: dict[str, np.ndarray]) -> list[list]:
    return [[name, list(arr.shape)] for name, arr in arrays.items()]


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format_version": FORMAT_VERSION,
        "encoder": config_to_dict(ckpt.enc_cfg),
        "decoder": config_to_dict(ckpt.dec_cfg),
        "train": config_to_dict(ckpt.train_cfg),
        "vocab_hash": ckpt.vocab_hash,
        "step": ckpt.step,
        "epoch": ckpt.epoch,
        "opt_step": ckpt.opt_step,
        "best_valid_mrr": ckpt.best_valid_mrr,
        "params": _manifest(ckpt.params),
        "buffers": _manifest(ckpt.buffers),
        "opt_state": _manifest(ckpt.opt_state),
    }
    header_bytes = json.dumps(header, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(FORMAT_VERSION).tobytes())
        fh.write(np.uint64(len(header_bytes)).tobytes())
        fh.write(header_bytes)
        for group in (ckpt.params, ckpt.buffers, ckpt.opt_state):
            for arr in group.values():
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValidationError(f"{path} is not a checkpoint (bad magic bytes)")
        version = int(np.frombuffer(fh.read(4), dtype=np.uint32)[0])
        if version != FORMAT_VERSION:
            raise ValidationError(f"unsupported checkpoint format version {version}")
        header_len = int(np.frombuffer(fh.read(8), dtype=np.uint64)[0])
        header = json.loads(fh.read(header_len).decode("utf-8"))

        def read_group(manifest: list[list]) -> dict[str, np.ndarray]:
            out: dict[str, np.ndarray] = {}
            for name, shape in manifest:
                count = int(np.prod(shape)) if shape else 1
                raw = fh.read(count * 8)
                if len(raw) != count * 8:
                    raise ValidationError(f"truncated checkpoint block {name!r}")
                out[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
            return out

        params = read_group(header["params"])
        buffers = read_group(header["buffers"])
        opt_state = read_group(header["opt_state"])

    return Checkpoint(
        enc_cfg=config_from_dict(EncoderConfig, header["encoder"]),
        dec_cfg=config_from_dict(DecoderConfig, header["decoder"]),
        train_cfg=config_from_dict(TrainConfig, header["train"]),
        vocab_hash=header["vocab_hash"],
        params=params,
        buffers=buffers,
        opt_state=opt_state,
        opt_step=header["opt_step"],
        step=header["step"],
        epoch=header["epoch"],
        best_valid_mrr=header["best_valid_mrr"],
    )
