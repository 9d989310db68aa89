"""GNN message passing over a transformed KG.

Mediator entities start from the concatenation of a shared part (one
vector per primary relation, tied across all mediators of that relation)
and an independent part; original entities use full-width independent
vectors. Two message-passing flavors are provided:

* compgcn: direction-specific weights (forward / inverse / self) applied
  to an entity-relation composition (rotate, subtract or multiply), with
  a linear per-layer relation transform.
* rgcn: relation-and-direction specific weights on the source entity,
  neighborhood-normalized, plus a self weight; relations stay fixed.

A third flavor "none" skips message passing and returns the layer-0
embeddings, which reduces the full model to its decoder alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .numeric import RngHub, Tape, Tensor
from .numeric.tape import parameter
from .transform import TransformedKg

FLAVORS = ("compgcn", "rgcn", "none")
COMPOSITIONS = ("rotate", "subtract", "multiply")
AGGREGATIONS = ("mean", "sum")
ACTIVATIONS = ("tanh", "relu", "identity")


@dataclass
class EncoderConfig:
    flavor: str = "compgcn"
    layers: int = 2
    dim: int = 200
    share_ratio: float = 0.8
    composition: str = "rotate"
    dropout: float = 0.2
    aggregation: str = "mean"
    activation: str = "tanh"

    def validate(self) -> None:
        if self.flavor not in FLAVORS:
            raise ConfigError(f"flavor must be one of {FLAVORS}, got {self.flavor!r}")
        if not 1 <= self.layers <= 4:
            raise ConfigError(f"layers must be in 1..4, got {self.layers}")
        if self.dim < 1:
            raise ConfigError(f"dim must be positive, got {self.dim}")
        if not 0.0 <= self.share_ratio <= 1.0:
            raise ConfigError(f"share_ratio must be in [0, 1], got {self.share_ratio}")
        if self.composition not in COMPOSITIONS:
            raise ConfigError(f"composition must be one of {COMPOSITIONS}, got {self.composition!r}")
        if self.composition == "rotate" and self.dim % 2 != 0:
            raise ConfigError(f"rotate composition needs an even dim, got {self.dim}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"aggregation must be one of {AGGREGATIONS}, got {self.aggregation!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def shared_width(self) -> int:
        return math.floor(self.share_ratio * self.dim)


@dataclass
class MessageGraph:
    """Edge instances of a transformed KG laid out for vectorized passing.

    Forward and inverse blocks are each sorted by (relation, target,
    source), which both fixes the floating-point accumulation order and
    makes the per-relation runs contiguous for the rgcn flavor.
    """

    n_ext_entities: int
    n_ext_relations: int
    fwd_u: np.ndarray
    fwd_r: np.ndarray
    fwd_t: np.ndarray
    inv_u: np.ndarray
    inv_r: np.ndarray
    inv_t: np.ndarray
    counts: np.ndarray          # incoming instances per target, self included
    fwd_coeff: np.ndarray       # 1 / |N^{r}_t| per forward instance
    inv_coeff: np.ndarray
    fwd_groups: list[tuple[int, slice]] = field(default_factory=list)
    inv_groups: list[tuple[int, slice]] = field(default_factory=list)


def build_message_graph(kg: TransformedKg) -> MessageGraph:
    n_ext = len(kg.entities)
    n_rel = len(kg.relations)
    if kg.triples:
        arr = np.asarray(kg.triples, dtype=np.int64)
        h, r, t = arr[:, 0], arr[:, 1], arr[:, 2]
    else:
        h = r = t = np.zeros(0, dtype=np.int64)

    def block(u, rel, tgt):
        order = np.lexsort((u, tgt, rel))
        u, rel, tgt = u[order], rel[order], tgt[order]
        # per-(relation, target) neighborhood sizes
        if len(u):
            key = rel.astype(np.int64) * n_ext + tgt
            _, inverse, cnt = np.unique(key, return_inverse=True, return_counts=True)
            coeff = 1.0 / cnt[inverse]
        else:
            coeff = np.zeros(0)
        groups = []
        start = 0
        for i in range(1, len(rel) + 1):
            if i == len(rel) or rel[i] != rel[start]:
                groups.append((int(rel[start]) if len(rel) else 0, slice(start, i)))
                start = i
        return u, rel, tgt, coeff, groups

    fwd_u, fwd_r, fwd_t, fwd_coeff, fwd_groups = block(h, r, t)
    inv_u, inv_r, inv_t, inv_coeff, inv_groups = block(t.copy(), r.copy(), h.copy())

    counts = np.bincount(np.concatenate([fwd_t, inv_t]), minlength=n_ext).astype(np.float64)
    counts += 1.0  # self instance
    return MessageGraph(
        n_ext_entities=n_ext, n_ext_relations=n_rel,
        fwd_u=fwd_u, fwd_r=fwd_r, fwd_t=fwd_t,
        inv_u=inv_u, inv_r=inv_r, inv_t=inv_t,
        counts=counts, fwd_coeff=fwd_coeff, inv_coeff=inv_coeff,
        fwd_groups=fwd_groups, inv_groups=inv_groups,
    )


@dataclass
class EmbeddingTable:
    """All learnable state: embeddings plus per-layer weights.

    `params` order is fixed at construction and defines the checkpoint
    block layout. For compgcn the relation table holds forward rows
    [0, R), inverse rows [R, 2R) and a self-loop row 2R; for rgcn and
    "none" it holds only the R forward rows.
    """

    params: dict[str, Tensor]
    psi_rows: np.ndarray            # mediator -> row in the shared table
    shared_relations: tuple[int, ...]  # primary relation id per shared row
    n_entities: int
    n_mediators: int
    n_relations: int                # extended relation vocabulary size R
    dim: int

    def param_manifest(self) -> list[tuple[str, tuple[int, ...]]]:
        return [(k, tuple(p.data.shape)) for k, p in self.params.items()]


def _uniform(rng: np.random.Generator, shape, scale: float, dtype) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape).astype(dtype)


def _glorot(rng: np.random.Generator, shape, dtype) -> np.ndarray:
    limit = math.sqrt(6.0 / (shape[-2] + shape[-1]))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


EMBEDDING_INIT_SCALE = 0.1  # uniform in [-0.1, 0.1], recorded in checkpoints


def init_table(kg: TransformedKg, cfg: EncoderConfig, rng: RngHub,
               dtype=np.float64) -> EmbeddingTable:
    cfg.validate()
    d = cfg.dim
    n_ent = kg.n_original_entities
    n_med = kg.n_mediators
    n_rel = len(kg.relations)

    mediators = sorted(kg.mediator_of)
    shared_relations = tuple(sorted({kg.psi[b] for b in mediators}))
    shared_row = {rel: i for i, rel in enumerate(shared_relations)}
    psi_rows = np.asarray([shared_row[kg.psi[b]] for b in mediators], dtype=np.int64)

    w_shared = cfg.shared_width
    params: dict[str, Tensor] = {}

    def emb(name, shape, stream):
        params[name] = parameter(_uniform(rng.stream(stream), shape, EMBEDDING_INIT_SCALE, dtype), name)

    emb("entity_emb", (n_ent, d), "init/entity")
    emb("mediator_shared_emb", (len(shared_relations), w_shared), "init/mediator_shared")
    emb("mediator_indep_emb", (n_med, d - w_shared), "init/mediator_indep")
    if cfg.flavor == "compgcn":
        emb("relation_emb", (2 * n_rel + 1, d), "init/relation")
    else:
        emb("relation_emb", (n_rel, d), "init/relation")

    wstream = rng.stream("init/weights")
    if cfg.flavor == "compgcn":
        for l in range(cfg.layers):
            for tag in ("forward", "inverse", "self", "relation"):
                name = f"layer{l}.w_{tag}"
                params[name] = parameter(_glorot(wstream, (d, d), dtype), name)
    elif cfg.flavor == "rgcn":
        for l in range(cfg.layers):
            for direction in ("fwd", "inv"):
                for rel in range(n_rel):
                    name = f"layer{l}.w_{direction}_rel{rel}"
                    params[name] = parameter(_glorot(wstream, (d, d), dtype), name)
            name = f"layer{l}.w_self"
            params[name] = parameter(_glorot(wstream, (d, d), dtype), name)

    return EmbeddingTable(
        params=params, psi_rows=psi_rows, shared_relations=shared_relations,
        n_entities=n_ent, n_mediators=n_med, n_relations=n_rel, dim=d,
    )


def layer0_entities(tape: Tape, table: EmbeddingTable) -> Tensor:
    """Stack original entity rows over mediator rows [shared ; independent]."""
    ent = table.params["entity_emb"]
    if table.n_mediators == 0:
        return ent
    shared = tape.gather(table.params["mediator_shared_emb"], table.psi_rows)
    med = tape.concat_cols(shared, table.params["mediator_indep_emb"])
    return tape.concat_rows([ent, med])


def _compose(tape: Tape, cfg: EncoderConfig, h_u: Tensor, h_r: Tensor) -> Tensor:
    if cfg.composition == "rotate":
        return tape.rotate(h_u, h_r)
    if cfg.composition == "subtract":
        return tape.sub(h_u, h_r)
    return tape.mul(h_u, h_r)


def _activate(tape: Tape, cfg: EncoderConfig, x: Tensor) -> Tensor:
    if cfg.activation == "tanh":
        return tape.tanh(x)
    if cfg.activation == "relu":
        return tape.relu(x)
    return x


def encode(
    kg: TransformedKg,
    table: EmbeddingTable,
    cfg: EncoderConfig,
    tape: Tape,
    graph: MessageGraph | None = None,
    mode: str = "train",
    rng: RngHub | None = None,
) -> tuple[Tensor, Tensor]:
    """Run the message-passing stack; returns (entity, relation) embeddings.

    Entities cover the extended vocabulary (originals then mediators);
    relation rows [0, R) always correspond to the extended relation
    vocabulary and are the rows the decoder consumes.
    """
    cfg.validate()
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    training = mode == "train"
    if training and cfg.dropout > 0.0 and rng is None and cfg.flavor != "none":
        raise ConfigError("training-mode encode with dropout needs an rng hub")

    h_ent = layer0_entities(tape, table)
    h_rel = table.params["relation_emb"]
    if cfg.flavor == "none":
        return h_ent, h_rel

    if graph is None:
        graph = build_message_graph(kg)
    n_ext = graph.n_ext_entities
    R = graph.n_ext_relations
    self_idx = np.arange(n_ext, dtype=np.int64)

    for l in range(cfg.layers):
        if cfg.flavor == "compgcn":
            parts, targets = [], []
            for dir_tag, u, r_ids, t_ids, offset in (
                ("forward", graph.fwd_u, graph.fwd_r, graph.fwd_t, 0),
                ("inverse", graph.inv_u, graph.inv_r, graph.inv_t, R),
            ):
                if len(u) == 0:
                    continue
                h_u = tape.gather(h_ent, u)
                h_r = tape.gather(h_rel, r_ids + offset)
                comp = _compose(tape, cfg, h_u, h_r)
                parts.append(tape.matmul(comp, table.params[f"layer{l}.w_{dir_tag}"]))
                targets.append(t_ids)
            h_r_self = tape.gather(h_rel, np.full(n_ext, 2 * R, dtype=np.int64))
            comp_self = _compose(tape, cfg, h_ent, h_r_self)
            parts.append(tape.matmul(comp_self, table.params[f"layer{l}.w_self"]))
            targets.append(self_idx)

            msgs = tape.concat_rows(parts) if len(parts) > 1 else parts[0]
            t_all = np.concatenate(targets)
            agg = tape.segment_sum(msgs, t_all, n_ext)
            if cfg.aggregation == "mean":
                agg = tape.scale_rows(agg, 1.0 / graph.counts)
            h_next = _activate(tape, cfg, agg)
            h_rel = tape.matmul(h_rel, table.params[f"layer{l}.w_relation"])
        else:  # rgcn
            parts, targets = [], []
            for direction, u, t_ids, coeff, groups in (
                ("fwd", graph.fwd_u, graph.fwd_t, graph.fwd_coeff, graph.fwd_groups),
                ("inv", graph.inv_u, graph.inv_t, graph.inv_coeff, graph.inv_groups),
            ):
                for rel, sl in groups:
                    h_u = tape.gather(h_ent, u[sl])
                    m = tape.matmul(h_u, table.params[f"layer{l}.w_{direction}_rel{rel}"])
                    if cfg.aggregation == "mean":
                        m = tape.scale_rows(m, coeff[sl])
                    parts.append(m)
                    targets.append(t_ids[sl])
            self_term = tape.matmul(h_ent, table.params[f"layer{l}.w_self"])
            if parts:
                msgs = tape.concat_rows(parts) if len(parts) > 1 else parts[0]
                agg = tape.segment_sum(msgs, np.concatenate(targets), n_ext)
                agg = tape.add(agg, self_term)
            else:
                agg = self_term
            h_next = _activate(tape, cfg, agg)

        if training and cfg.dropout > 0.0:
            h_next = tape.dropout(h_next, cfg.dropout, rng.stream("dropout/encoder"), True)
        h_ent = h_next

    return h_ent, h_rel
