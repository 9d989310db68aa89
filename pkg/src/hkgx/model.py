"""Model bundle: transformed graph, embedding tables and configs.

Assembles everything the trainer and evaluator share, so neither needs to
import the other. Evaluation always runs on 64-bit copies of the
parameters, which keeps recorded validation metrics reproducible after a
checkpoint round-trip regardless of the training dtype.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import HkgDataset
from .decoder import DecoderConfig, DecoderParams, init_decoder_params
from .encoder import (
    EmbeddingTable,
    EncoderConfig,
    MessageGraph,
    build_message_graph,
    encode,
    init_table,
)
from .errors import ConfigError
from .numeric import RngHub, Tape, Tensor
from .transform import VARIANTS, TransformedKg, transform

DTYPES = {"float64": np.float64, "float32": np.float32}


@dataclass
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 5e-4
    dropout: float | None = None   # overrides encoder/decoder dropout when set
    negatives: int = 10            # per entity position
    epochs: int = 100
    eval_interval: int = 5         # epochs between validation evaluations
    patience: int = 5              # evaluations without improvement before stopping
    seed: int = 0
    transform_variant: str = "equivalent"
    dtype: str = "float64"

    def validate(self) -> None:
        for name in ("batch_size", "negatives", "epochs", "eval_interval", "patience"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.dropout is not None and not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.transform_variant not in VARIANTS:
            raise ConfigError(
                f"transform_variant must be one of {VARIANTS}, got {self.transform_variant!r}"
            )
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {tuple(DTYPES)}, got {self.dtype!r}")


@dataclass
class Model:
    """Everything needed to score facts: graph, tables and configs."""

    kg: TransformedKg
    graph: MessageGraph
    table: EmbeddingTable
    dec: DecoderParams
    enc_cfg: EncoderConfig
    dec_cfg: DecoderConfig

    def all_params(self) -> dict[str, Tensor]:
        out = dict(self.table.params)
        out.update(self.dec.params)
        return out

    def param_arrays(self, dtype=np.float64) -> dict[str, np.ndarray]:
        return {k: np.asarray(p.data, dtype=dtype) for k, p in self.all_params().items()}

    def buffer_arrays(self, dtype=np.float64) -> dict[str, np.ndarray]:
        return {k: np.asarray(v, dtype=dtype) for k, v in self.dec.buffers.items()}


def build_model(
    ds: HkgDataset,
    enc_cfg: EncoderConfig,
    dec_cfg: DecoderConfig,
    rng: RngHub,
    variant: str = "equivalent",
    dtype: str = "float64",
) -> Model:
    """Transform the train split and initialize all learnable state."""
    enc_cfg.validate()
    dec_cfg.validate(enc_cfg.dim)
    if dec_cfg.flavor == "hype" and dec_cfg.max_positions < 2 + ds.max_qualifiers:
        raise ConfigError(
            f"decoder covers positions up to {dec_cfg.max_positions} but the dataset "
            f"has facts with {ds.max_qualifiers} qualifiers (position {2 + ds.max_qualifiers})"
        )
    np_dtype = DTYPES[dtype]
    kg = transform(ds, variant, split="train")
    graph = build_message_graph(kg)
    table = init_table(kg, enc_cfg, rng, dtype=np_dtype)
    dec = init_decoder_params(dec_cfg, enc_cfg.dim, rng, dtype=np_dtype)
    return Model(kg=kg, graph=graph, table=table, dec=dec,
                 enc_cfg=enc_cfg, dec_cfg=dec_cfg)


def apply_param_arrays(model: Model, params: dict[str, np.ndarray],
                       buffers: dict[str, np.ndarray], dtype: str = "float64") -> None:
    """Load parameter values (e.g. from a checkpoint) into a model in place."""
    np_dtype = DTYPES[dtype]
    own = model.all_params()
    if set(own) != set(params):
        missing = set(own) ^ set(params)
        raise ConfigError(f"parameter name mismatch: {sorted(missing)[:5]}")
    for name, tensor in own.items():
        arr = np.asarray(params[name], dtype=np_dtype)
        if arr.shape != tensor.data.shape:
            raise ConfigError(
                f"parameter {name!r} shape {arr.shape} != expected {tensor.data.shape}"
            )
        tensor.data = arr.copy()
    for name in model.dec.buffers:
        model.dec.buffers[name] = np.asarray(buffers[name], dtype=np_dtype).copy()


def encode_eval(model: Model) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode encoding on 64-bit parameter copies; returns numpy arrays."""
    needs_cast = any(p.data.dtype != np.float64 for p in model.all_params().values())
    if needs_cast:
        table = EmbeddingTable(
            params={k: Tensor(np.asarray(p.data, dtype=np.float64)) for k, p in model.table.params.items()},
            psi_rows=model.table.psi_rows,
            shared_relations=model.table.shared_relations,
            n_entities=model.table.n_entities,
            n_mediators=model.table.n_mediators,
            n_relations=model.table.n_relations,
            dim=model.table.dim,
        )
    else:
        table = model.table
    tape = Tape()
    h_ent, h_rel = encode(model.kg, table, model.enc_cfg, tape,
                          graph=model.graph, mode="eval")
    return np.asarray(h_ent.data, dtype=np.float64), np.asarray(h_rel.data, dtype=np.float64)


def eval_decoder_params(model: Model) -> DecoderParams:
    """Decoder params as 64-bit tensors for the numpy scoring path."""
    if all(p.data.dtype == np.float64 for p in model.dec.params.values()):
        return model.dec
    return DecoderParams(
        params={k: Tensor(np.asarray(p.data, dtype=np.float64)) for k, p in model.dec.params.items()},
        buffers={k: np.asarray(v, dtype=np.float64) for k, v in model.dec.buffers.items()},
    )
