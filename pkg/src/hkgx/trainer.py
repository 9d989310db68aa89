"""Mini-batch training: transform once, then encode / score / update.

Each step encodes the full transformed train graph, scores the batch
positives together with k uniform corruptions of every entity position,
and minimizes the softmax cross-entropy of the positive against its own
negatives. Validation MRR is evaluated periodically for early stopping;
the best parameters are returned as a checkpoint.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint
from .core import HkgDataset, HyperFact
from .decoder import DecoderConfig, score_rows
from .encoder import EncoderConfig, encode
from .errors import NumericError, ValidationError
from .evaluator import build_filter_index, evaluate_model
from .model import Model, TrainConfig, build_model
from .numeric import Adam, RngHub, Tape

log = logging.getLogger(__name__)


def sample_negatives(fact: HyperFact, k: int, rng: np.random.Generator,
                     n_entities: int) -> list[HyperFact]:
    """k uniform corruptions of every entity position of `fact`.

    Each corruption replaces one position with an entity drawn uniformly
    from the other n_entities - 1; corrupted facts keep their slot layout
    (no re-canonicalization) and may coincide with other true facts.
    """
    if n_entities < 2:
        raise ValidationError("negative sampling needs at least 2 entities")
    out = []
    for kind, qidx, true in fact.entity_positions():
        draws = rng.integers(0, n_entities - 1, size=k)
        draws = draws + (draws >= true)
        out.extend(fact.replace_entity(kind, qidx, int(e)) for e in draws)
    return out


def cross_entropy_loss(pos_score: float, neg_scores: list[float]) -> float:
    """-log( e^pos / (e^pos + sum e^neg) ), computed with max subtraction."""
    if not neg_scores:
        log.warning("empty negative set: loss is 0 by convention")
        return 0.0
    scores = np.asarray([pos_score] + list(neg_scores), dtype=np.float64)
    z = scores - scores.max()
    return float(np.log(np.exp(z).sum()) - z[0])


def _group_by_arity(facts: list[HyperFact]) -> dict[int, list[HyperFact]]:
    groups: dict[int, list[HyperFact]] = {}
    for f in facts:
        groups.setdefault(f.n_qualifiers, []).append(f)
    return groups


def _fact_arrays(facts: list[HyperFact]) -> tuple[np.ndarray, np.ndarray, np.ndarray, list, list]:
    n = facts[0].n_qualifiers
    s = np.asarray([f.subject for f in facts], dtype=np.int64)
    r = np.asarray([f.relation for f in facts], dtype=np.int64)
    o = np.asarray([f.object for f in facts], dtype=np.int64)
    attrs = [np.asarray([f.qualifiers[i][0] for f in facts], dtype=np.int64) for i in range(n)]
    vals = [np.asarray([f.qualifiers[i][1] for f in facts], dtype=np.int64) for i in range(n)]
    return s, r, o, attrs, vals


def _group_loss(tape: Tape, model: Model, h_ent, h_rel, facts: list[HyperFact],
                k: int, rng: RngHub, n_entities: int):
    """Cross-entropy loss of one same-arity group of positive facts."""
    B = len(facts)
    n = facts[0].n_qualifiers
    s, r, o, attrs, vals = _fact_arrays(facts)

    def scores(s_, o_, attrs_, vals_, r_):
        return score_rows(tape, model.dec_cfg, model.dec, h_ent, h_rel,
                          s_, r_, o_, attrs_, vals_, mode="train", rng=rng)

    pos = scores(s, o, attrs, vals, r)

    gen = rng.stream("negatives")
    r_rep = np.repeat(r, k)
    s_rep = np.repeat(s, k)
    o_rep = np.repeat(o, k)
    attrs_rep = [np.repeat(a, k) for a in attrs]
    vals_rep = [np.repeat(v, k) for v in vals]

    def corrupt(true_col: np.ndarray) -> np.ndarray:
        draws = gen.integers(0, n_entities - 1, size=(B, k))
        draws = draws + (draws >= true_col[:, None])
        return draws.reshape(-1)

    # one block of k corruptions per entity position: subject, object, values
    neg_blocks = [
        scores(corrupt(s), o_rep, attrs_rep, vals_rep, r_rep),
        scores(s_rep, corrupt(o), attrs_rep, vals_rep, r_rep),
    ]
    for i in range(n):
        vals_i = list(vals_rep)
        vals_i[i] = corrupt(vals[i])
        neg_blocks.append(scores(s_rep, o_rep, attrs_rep, vals_i, r_rep))

    table = tape.reshape(pos, (B, 1))
    for block in neg_blocks:
        table = tape.concat_cols(table, tape.reshape(block, (B, k)))
    return tape.softmax_cross_entropy(table)


def train(
    ds: HkgDataset,
    enc_cfg: EncoderConfig,
    dec_cfg: DecoderConfig,
    cfg: TrainConfig,
    curve_path: str | Path | None = None,
) -> Checkpoint:
    """Run the full training loop and return the best checkpoint found.

    "Best" means highest filtered validation MRR over the periodic
    evaluations; with an empty validation split the final parameters are
    returned instead.
    """
    cfg.validate()
    if not ds.train:
        raise ValidationError("training needs a non-empty train split")
    if len(ds.entities) < 2:
        raise ValidationError("training needs at least 2 entities")

    enc_cfg = dataclasses.replace(enc_cfg)
    dec_cfg = dataclasses.replace(dec_cfg)
    if cfg.dropout is not None:
        enc_cfg.dropout = cfg.dropout
        dec_cfg.dropout = cfg.dropout

    rng = RngHub(cfg.seed)
    model = build_model(ds, enc_cfg, dec_cfg, rng,
                        variant=cfg.transform_variant, dtype=cfg.dtype)
    params = model.all_params()
    opt = Adam(params, lr=cfg.learning_rate)
    index = build_filter_index(ds)
    n_entities = len(ds.entities)
    train_facts = list(ds.train)
    shuffle = rng.stream("shuffle")

    curve_fh = None
    if curve_path is not None:
        Path(curve_path).parent.mkdir(parents=True, exist_ok=True)
        curve_fh = open(curve_path, "w", encoding="utf-8")
        curve_fh.write("step,epoch,train_loss,valid_mrr,wall_seconds\n")

    def snapshot(step: int, epoch: int, mrr: float | None) -> Checkpoint:
        return Checkpoint(
            enc_cfg=enc_cfg, dec_cfg=dec_cfg, train_cfg=cfg,
            vocab_hash=ds.vocab_hash(),
            params={k: np.asarray(p.data, dtype=np.float64).copy()
                    for k, p in params.items()},
            buffers={k: np.asarray(v, dtype=np.float64).copy()
                     for k, v in model.dec.buffers.items()},
            opt_state={k: v.copy() for k, v in opt.state_arrays().items()},
            opt_step=opt.step_count, step=step, epoch=epoch, best_valid_mrr=mrr,
        )

    start = time.monotonic()
    best: Checkpoint | None = None
    evals_since_best = 0
    step = 0
    final_epoch = 0
    try:
        for epoch in range(1, cfg.epochs + 1):
            final_epoch = epoch
            order = shuffle.permutation(len(train_facts))
            for lo in range(0, len(order), cfg.batch_size):
                batch = [train_facts[i] for i in order[lo:lo + cfg.batch_size]]
                step += 1
                tape = Tape()
                h_ent, h_rel = encode(model.kg, model.table, enc_cfg, tape,
                                      graph=model.graph, mode="train", rng=rng)
                loss = None
                for _, facts in sorted(_group_by_arity(batch).items()):
                    g = _group_loss(tape, model, h_ent, h_rel, facts,
                                    cfg.negatives, rng, n_entities)
                    loss = g if loss is None else tape.add(loss, g)
                loss_value = float(loss.data)
                if not math.isfinite(loss_value):
                    raise NumericError(f"non-finite loss at step {step} (epoch {epoch})")
                tape.backward(loss)
                opt.step()
                opt.zero_grad()
                if curve_fh is not None:
                    curve_fh.write(f"{step},{epoch},{loss_value / len(batch):.10g},,"
                                   f"{time.monotonic() - start:.3f}\n")

            if epoch % cfg.eval_interval == 0 or epoch == cfg.epochs:
                mrr = evaluate_model(model, ds, "valid", index=index).mrr if ds.valid else None
                if curve_fh is not None:
                    curve_fh.write(f"{step},{epoch},,"
                                   f"{'' if mrr is None else f'{mrr:.10g}'},"
                                   f"{time.monotonic() - start:.3f}\n")
                log.info("evaluated: epoch=%d step=%d valid_mrr=%s", epoch, step,
                         "n/a" if mrr is None else f"{mrr:.4f}")
                if mrr is None:
                    continue
                if best is None or mrr > best.best_valid_mrr:
                    best = snapshot(step, epoch, mrr)
                    evals_since_best = 0
                else:
                    evals_since_best += 1
                    if evals_since_best >= cfg.patience:
                        log.info("early stopping: epoch=%d best_valid_mrr=%.4f",
                                 epoch, best.best_valid_mrr)
                        break
    finally:
        if curve_fh is not None:
            curve_fh.close()

    if best is None:
        best = snapshot(step, final_epoch, None)
    return best
