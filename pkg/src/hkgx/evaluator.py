"""Filtered link-prediction evaluation over every entity position.

For each fact of the evaluated split and each entity slot (subject,
object, every qualifier value), all original entities are scored as
candidates; other entities known to complete the pattern into a true fact
anywhere in train/valid/test are filtered out; the gold entity's rank is
pessimistic (it loses ties). Mediator entities are artifacts of the
transformation and are never candidates.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint
from .core import HkgDataset, HyperFact
from .decoder import score_candidates
from .errors import ValidationError
from .model import Model, apply_param_arrays, build_model, encode_eval, eval_decoder_params
from .numeric import RngHub

HITS_AT = (1, 3, 10)

# A pattern key: position kind, qualifier index, and the fact's flat id
# tuple with the held-out slot replaced by -1.
PatternKey = tuple[str, int, tuple[int, ...]]

_FLAT_SLOT = {"subject": 0, "object": 2}


def pattern_key(fact: HyperFact, kind: str, qualifier_index: int) -> PatternKey:
    flat = list(fact.flat())
    slot = _FLAT_SLOT.get(kind, 4 + 2 * qualifier_index)
    flat[slot] = -1
    return (kind, qualifier_index if kind == "value" else -1, tuple(flat))


def build_filter_index(ds: HkgDataset) -> dict[PatternKey, set[int]]:
    """Map every blanked entity pattern to the entities completing it
    into a fact known in any split."""
    index: dict[PatternKey, set[int]] = {}
    for fact in ds.facts():
        for kind, qidx, gold in fact.entity_positions():
            index.setdefault(pattern_key(fact, kind, qidx), set()).add(gold)
    return index


def rank_with_filter(scores: np.ndarray, gold: int, filtered: set[int]) -> int:
    """Pessimistic filtered rank: gold is placed below equal-scored rivals."""
    scores = scores.copy()
    drop = [e for e in filtered if e != gold]
    if drop:
        scores[drop] = -np.inf
    gold_score = scores[gold]
    greater = int(np.count_nonzero(scores > gold_score))
    equal = int(np.count_nonzero(scores == gold_score))  # includes gold itself
    return greater + equal


@dataclass(frozen=True, slots=True)
class QueryRecord:
    fact_index: int
    kind: str               # subject | object | value
    qualifier_index: int    # -1 for triple slots
    arity: int              # qualifier count of the fact
    rank: int


def _aggregate(records: list[QueryRecord]) -> dict:
    if not records:
        return {"n_queries": 0, "mrr": None,
                **{f"hits@{k}": None for k in HITS_AT}}
    ranks = np.asarray([r.rank for r in records], dtype=np.float64)
    out = {"n_queries": len(records), "mrr": float((1.0 / ranks).mean())}
    for k in HITS_AT:
        out[f"hits@{k}"] = float((ranks <= k).mean())
    return out


@dataclass
class RankReport:
    """Per-query ranks plus filtered MRR / Hits aggregates."""

    split: str
    n_candidates: int
    records: list[QueryRecord] = field(default_factory=list)

    @property
    def mrr(self) -> float:
        return _aggregate(self.records)["mrr"]

    def aggregates(self) -> dict:
        return _aggregate(self.records)

    def to_dict(self, include_records: bool = False) -> dict:
        by_position = {
            kind: _aggregate([r for r in self.records if r.kind == kind])
            for kind in ("subject", "object", "value")
        }
        arities = sorted({r.arity for r in self.records})
        by_arity = {
            str(n): _aggregate([r for r in self.records if r.arity == n])
            for n in arities
        }
        out = {
            "split": self.split,
            "n_candidates": self.n_candidates,
            **self.aggregates(),
            "by_position": by_position,
            "by_arity": by_arity,
        }
        if include_records:
            out["records"] = [
                {"fact_index": r.fact_index, "kind": r.kind,
                 "qualifier_index": r.qualifier_index, "arity": r.arity, "rank": r.rank}
                for r in self.records
            ]
        return out

    def write_json(self, path: str | Path, include_records: bool = False) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(include_records), fh, ensure_ascii=False, indent=1)
            fh.write("\n")

    def write_ranks_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("fact_index,kind,qualifier_index,arity,rank\n")
            for r in self.records:
                fh.write(f"{r.fact_index},{r.kind},{r.qualifier_index},{r.arity},{r.rank}\n")


def evaluate_model(
    model: Model,
    ds: HkgDataset,
    split: str,
    index: dict[PatternKey, set[int]] | None = None,
    threads: int = 1,
) -> RankReport:
    """Rank the gold entity of every (fact, position) query in `split`."""
    h_ent, h_rel = encode_eval(model)
    dec = eval_decoder_params(model)
    if index is None:
        index = build_filter_index(ds)
    n_candidates = len(ds.entities)
    facts = ds.split(split)
    conv_cache: dict[int, np.ndarray] = {}

    def run_query(job) -> QueryRecord:
        fi, fact, kind, qidx, gold = job
        scores = score_candidates(
            model.dec_cfg, dec, h_ent, h_rel, fact, (kind, qidx),
            n_candidates, conv_cache=conv_cache,
        )
        filtered = index.get(pattern_key(fact, kind, qidx), set())
        return QueryRecord(fi, kind, qidx, fact.n_qualifiers,
                           rank_with_filter(scores, gold, filtered))

    jobs = [
        (fi, fact, kind, qidx, gold)
        for fi, fact in enumerate(facts)
        for kind, qidx, gold in fact.entity_positions()
    ]
    if model.dec_cfg.flavor == "hype" and jobs:
        # warm the per-position candidate convolutions before any threading
        from .decoder import _conv_np
        max_pos = 2 + max(f.n_qualifiers for f in facts)
        for pos in range(1, max_pos + 1):
            conv_cache[pos] = _conv_np(model.dec_cfg, dec, h_ent[:n_candidates], pos)
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(run_query, jobs, chunksize=64))
    else:
        records = [run_query(j) for j in jobs]
    return RankReport(split=split, n_candidates=n_candidates, records=records)


def model_from_checkpoint(ckpt: Checkpoint, ds: HkgDataset) -> Model:
    if ckpt.vocab_hash != ds.vocab_hash():
        raise ValidationError(
            "checkpoint vocabulary hash does not match the dataset; "
            "it was trained on different data"
        )
    model = build_model(ds, ckpt.enc_cfg, ckpt.dec_cfg, RngHub(ckpt.train_cfg.seed),
                        variant=ckpt.train_cfg.transform_variant, dtype="float64")
    apply_param_arrays(model, ckpt.params, ckpt.buffers, dtype="float64")
    return model


def evaluate(ckpt: Checkpoint, ds: HkgDataset, split: str = "test",
             threads: int = 1) -> RankReport:
    """Evaluate a checkpoint on one split of its dataset."""
    model = model_from_checkpoint(ckpt, ds)
    return evaluate_model(model, ds, split, threads=threads)


def export_embeddings(ckpt: Checkpoint, ds: HkgDataset, path: str | Path) -> None:
    """Write `label<TAB>v1<TAB>...` rows of the encoded extended entities
    (originals and mediators) for external visualization."""
    model = model_from_checkpoint(ckpt, ds)
    h_ent, _ = encode_eval(model)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for i, label in enumerate(model.kg.entities.labels):
            row = "\t".join(repr(x) for x in h_ent[i])
            fh.write(f"{label}\t{row}\n")
