"""Scoring functions over encoder outputs for hyper-relational facts.

The default scorer composes the primary-relation and attribute embeddings
into one relation vector (mean or sum pooling) and takes the multilinear
product with every entity embedding of the fact:

    score = sum_j rhat[j] * h_s[j] * h_o[j] * prod_i h_vi[j]

The hype flavor first convolves each entity embedding with a circular
filter bank specific to its position (subject=1, object=2, value_i=2+i)
and then takes the same product; it exists to provide a fully expressive
decoder at small scale, not to win benchmarks.

The batched candidate scorer multiplies factors in the same left-to-right
slot order as the scalar scorer, so the two agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import HyperFact
from .errors import ConfigError
from .numeric import RngHub, Tape, Tensor
from .numeric.tape import parameter

DECODER_FLAVORS = ("mdistmult", "hype")
RELATION_AGGS = ("mean", "sum")

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


@dataclass
class DecoderConfig:
    flavor: str = "mdistmult"
    relation_agg: str = "mean"
    dropout: float = 0.2
    filter_length: int = 3      # hype
    n_filters: int = 2          # hype
    max_positions: int = 8      # hype: largest covered position index
    batch_norm: bool = False    # affine normalization of the composed relation

    def validate(self, dim: int | None = None) -> None:
        if self.flavor not in DECODER_FLAVORS:
            raise ConfigError(f"flavor must be one of {DECODER_FLAVORS}, got {self.flavor!r}")
        if self.relation_agg not in RELATION_AGGS:
            raise ConfigError(f"relation_agg must be one of {RELATION_AGGS}, got {self.relation_agg!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.flavor == "hype":
            if self.filter_length < 1 or self.n_filters < 1 or self.max_positions < 2:
                raise ConfigError("hype needs positive filter_length/n_filters and max_positions >= 2")
            if dim is not None and self.filter_length > dim:
                raise ConfigError(f"filter_length {self.filter_length} exceeds dim {dim}")


@dataclass
class DecoderParams:
    """Learnable decoder state plus non-learnable running buffers."""

    params: dict[str, Tensor]
    buffers: dict[str, np.ndarray]

    def filter_names(self, position: int, n_filters: int) -> list[str]:
        return [f"decoder.filter_p{position}_f{f}" for f in range(n_filters)]


def init_decoder_params(cfg: DecoderConfig, dim: int, rng: RngHub,
                        dtype=np.float64) -> DecoderParams:
    cfg.validate(dim)
    params: dict[str, Tensor] = {}
    buffers: dict[str, np.ndarray] = {}
    if cfg.flavor == "hype":
        stream = rng.stream("init/decoder_filters")
        for p in range(1, cfg.max_positions + 1):
            for f in range(cfg.n_filters):
                # near-delta init: convolution starts close to the identity
                filt = stream.uniform(-0.1, 0.1, size=cfg.filter_length).astype(dtype)
                filt[0] += 1.0
                name = f"decoder.filter_p{p}_f{f}"
                params[name] = parameter(filt, name)
    if cfg.batch_norm:
        params["decoder.bn_gain"] = parameter(np.ones(dim, dtype=dtype), "decoder.bn_gain")
        params["decoder.bn_bias"] = parameter(np.zeros(dim, dtype=dtype), "decoder.bn_bias")
        buffers["decoder.bn_mean"] = np.zeros(dim, dtype=dtype)
        buffers["decoder.bn_var"] = np.ones(dim, dtype=dtype)
    return DecoderParams(params=params, buffers=buffers)


def _check_positions(cfg: DecoderConfig, n_qualifiers: int) -> None:
    if cfg.flavor == "hype" and 2 + n_qualifiers > cfg.max_positions:
        raise ConfigError(
            f"fact with {n_qualifiers} qualifiers needs position {2 + n_qualifiers}, "
            f"but the decoder covers only {cfg.max_positions}"
        )


# -- tape (training) path ----------------------------------------------------


def _conv_rows(tape: Tape, cfg: DecoderConfig, dec: DecoderParams,
               rows: Tensor, position: int) -> Tensor:
    """Mean response of the position's filter bank (hype only)."""
    if cfg.flavor != "hype":
        return rows
    total = None
    for name in dec.filter_names(position, cfg.n_filters):
        convolved = tape.circular_conv(rows, dec.params[name])
        total = convolved if total is None else tape.add(total, convolved)
    return tape.scale(total, 1.0 / cfg.n_filters)


def _bn_rows(tape: Tape, dec: DecoderParams, x: Tensor, training: bool) -> Tensor:
    gain = dec.params["decoder.bn_gain"]
    bias = dec.params["decoder.bn_bias"]
    if training:
        mu = tape.mean_rows(x)
        xc = tape.sub(x, mu)
        var = tape.mean_rows(tape.mul(xc, xc))
        xn = tape.div(xc, tape.sqrt(tape.add_const(var, BN_EPS)))
        dec.buffers["decoder.bn_mean"] *= BN_MOMENTUM
        dec.buffers["decoder.bn_mean"] += (1.0 - BN_MOMENTUM) * mu.data
        dec.buffers["decoder.bn_var"] *= BN_MOMENTUM
        dec.buffers["decoder.bn_var"] += (1.0 - BN_MOMENTUM) * var.data
    else:
        rm = Tensor(dec.buffers["decoder.bn_mean"])
        rstd = Tensor(np.sqrt(dec.buffers["decoder.bn_var"] + BN_EPS))
        xn = tape.div(tape.sub(x, rm), rstd)
    return tape.add(tape.mul(xn, gain), bias)


def aggregate_relation_rows(tape: Tape, cfg: DecoderConfig, h_rel: Tensor,
                            r_ids: np.ndarray, attr_cols: list[np.ndarray]) -> Tensor:
    """Compose primary relation and attribute rows into one vector per fact."""
    agg = tape.gather(h_rel, r_ids)
    for col in attr_cols:
        agg = tape.add(agg, tape.gather(h_rel, col))
    if cfg.relation_agg == "mean":
        agg = tape.scale(agg, 1.0 / (1 + len(attr_cols)))
    return agg


def score_rows(
    tape: Tape,
    cfg: DecoderConfig,
    dec: DecoderParams,
    h_ent: Tensor,
    h_rel: Tensor,
    s_ids: np.ndarray,
    r_ids: np.ndarray,
    o_ids: np.ndarray,
    attr_cols: list[np.ndarray],
    value_cols: list[np.ndarray],
    mode: str = "train",
    rng: RngHub | None = None,
) -> Tensor:
    """Differentiable scores for a same-arity batch of facts.

    `attr_cols[i]` / `value_cols[i]` hold the i-th qualifier slot of every
    fact in the batch.
    """
    cfg.validate()
    n = len(attr_cols)
    if len(value_cols) != n:
        raise ConfigError("attribute and value column counts differ")
    _check_positions(cfg, n)
    training = mode == "train"

    def drop(x: Tensor) -> Tensor:
        if training and cfg.dropout > 0.0:
            return tape.dropout(x, cfg.dropout, rng.stream("dropout/decoder"), True)
        return x

    rhat = aggregate_relation_rows(tape, cfg, h_rel, r_ids, attr_cols)
    if cfg.batch_norm:
        rhat = _bn_rows(tape, dec, rhat, training)
    rhat = drop(rhat)

    prod = rhat
    slots = [(s_ids, 1), (o_ids, 2)] + [(col, 3 + i) for i, col in enumerate(value_cols)]
    for ids, position in slots:
        rows = _conv_rows(tape, cfg, dec, tape.gather(h_ent, ids), position)
        prod = tape.mul(prod, drop(rows))
    return tape.row_sum(prod)


# -- numpy (evaluation) path ---------------------------------------------------


def _circ_conv_np(x: np.ndarray, filt: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    for k in range(len(filt)):
        out += filt[k] * np.roll(x, -k, axis=1)
    return out


def _conv_np(cfg: DecoderConfig, dec: DecoderParams, rows: np.ndarray,
             position: int) -> np.ndarray:
    if cfg.flavor != "hype":
        return rows
    total = None
    for name in dec.filter_names(position, cfg.n_filters):
        convolved = _circ_conv_np(rows, dec.params[name].data)
        total = convolved if total is None else total + convolved
    return total * (1.0 / cfg.n_filters)


def _rhat_np(cfg: DecoderConfig, dec: DecoderParams, h_rel: np.ndarray,
             fact: HyperFact) -> np.ndarray:
    rhat = h_rel[fact.relation].copy()
    for a, _ in fact.qualifiers:
        rhat = rhat + h_rel[a]
    if cfg.relation_agg == "mean":
        rhat = rhat * (1.0 / (1 + fact.n_qualifiers))
    if cfg.batch_norm:
        rm = dec.buffers["decoder.bn_mean"]
        rstd = np.sqrt(dec.buffers["decoder.bn_var"] + BN_EPS)
        rhat = (rhat - rm) / rstd * dec.params["decoder.bn_gain"].data \
            + dec.params["decoder.bn_bias"].data
    return rhat


def _slot_rows_np(cfg: DecoderConfig, dec: DecoderParams, h_ent: np.ndarray,
                  fact: HyperFact) -> list[tuple[np.ndarray, int]]:
    """(embedding row as a 1xd matrix, position) per entity slot, in order."""
    out = [(h_ent[fact.subject][None, :], 1), (h_ent[fact.object][None, :], 2)]
    out += [(h_ent[v][None, :], 3 + i) for i, (_, v) in enumerate(fact.qualifiers)]
    return [(_conv_np(cfg, dec, rows, pos), pos) for rows, pos in out]


def score_fact(cfg: DecoderConfig, dec: DecoderParams, h_ent: np.ndarray,
               h_rel: np.ndarray, fact: HyperFact) -> float:
    """Plausibility score of one fact (inference path, no gradients)."""
    cfg.validate()
    _check_positions(cfg, fact.n_qualifiers)
    prod = _rhat_np(cfg, dec, h_rel, fact)[None, :]
    for rows, _ in _slot_rows_np(cfg, dec, h_ent, fact):
        prod = prod * rows
    score = float(prod.sum(axis=1)[0])
    if not np.isfinite(score):
        raise ConfigError(f"non-finite score for fact {fact}")
    return score


def score_candidates(
    cfg: DecoderConfig,
    dec: DecoderParams,
    h_ent: np.ndarray,
    h_rel: np.ndarray,
    fact: HyperFact,
    hole: tuple[str, int],
    n_candidates: int,
    conv_cache: dict[int, np.ndarray] | None = None,
) -> np.ndarray:
    """Scores of the fact with one entity slot replaced by every candidate.

    Candidates are the first `n_candidates` rows of `h_ent` (the original,
    non-mediator entities). Entry e equals
    `score_fact(fact with hole filled by e)` bit for bit: factors are
    multiplied in the same slot order with the candidate block standing in
    at the hole's position. `conv_cache` memoizes the per-position
    convolution of the candidate block for the hype flavor.
    """
    cfg.validate()
    _check_positions(cfg, fact.n_qualifiers)
    kind, qidx = hole
    slots = fact.entity_positions()
    hole_slot = next(
        i for i, (k, qi, _) in enumerate(slots) if (k, qi) == (kind, qidx)
    )

    candidates = h_ent[:n_candidates]
    prod = _rhat_np(cfg, dec, h_rel, fact)[None, :]
    for i, (rows, pos) in enumerate(_slot_rows_np(cfg, dec, h_ent, fact)):
        if i == hole_slot:
            if cfg.flavor == "hype":
                if conv_cache is not None and pos in conv_cache:
                    block = conv_cache[pos]
                else:
                    block = _conv_np(cfg, dec, candidates, pos)
                    if conv_cache is not None:
                        conv_cache[pos] = block
            else:
                block = candidates
            prod = prod * block
        else:
            prod = prod * rows
    scores = prod.sum(axis=1)
    if not np.all(np.isfinite(scores)):
        raise ConfigError("non-finite candidate scores")
    return scores
