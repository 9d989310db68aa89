"""Hyperedge-expansion style transformations between HKGs and triple KGs.

The equivalent transformation expands every qualifier-bearing fact into a
star around a fresh mediator entity while keeping the primary triple as a
direct edge, which makes the mapping invertible. The lossy variants
(plain star, clique expansions, and the no-distinction ablation) are also
provided, together with exact node/edge/relation accounting.

For the k-th fact ``(s, r, o, {(a_i, v_i)})`` with at least one
qualifier, the equivalent transformation emits::

    (s, r, o)  (b_k, r#sub, s)  (b_k, r#obj, o)  (b_k, a_i, v_i) ...

where ``b_k`` is the mediator for fact index k. Plain triple facts are
emitted as-is, without a mediator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .core import (
    MEDIATOR_PREFIX,
    HkgDataset,
    HyperFact,
    Vocab,
    canonical_fact,
    dataset_stats,
)
from .errors import StructureError, ValidationError

SUB_SUFFIX = "#sub"
OBJ_SUFFIX = "#obj"

VARIANTS = ("equivalent", "plain", "clique-plain", "clique-semantic", "no-distinction")
STAR_VARIANTS = ("equivalent", "plain", "no-distinction")

Triple = tuple[int, int, int]


@dataclass(frozen=True)
class TransformedKg:
    """A triple KG over extended vocabularies, with mediator bookkeeping.

    Extended entities keep the original ids and append mediators; extended
    relations keep the original ids and append the ``#sub``/``#obj``
    relations (star variants with semantic distinction only). The triple
    list is de-duplicated in first-emission order; `edge_emissions` counts
    every emitted edge including duplicates, which is the quantity the
    closed-form complexity formulas predict.
    """

    entities: Vocab
    relations: Vocab
    triples: tuple[Triple, ...]
    mediator_of: dict[int, int]      # mediator entity id -> source fact index
    psi: dict[int, int]              # mediator entity id -> primary relation id
    variant: str
    n_original_entities: int
    n_original_relations: int
    source_split: str | None
    plain_fact_triples: frozenset[Triple]  # provenance: triples that were n=0 facts
    edge_emissions: int
    triple_set: frozenset[Triple] = field(default_factory=frozenset)

    def is_mediator(self, entity_id: int) -> bool:
        return entity_id >= self.n_original_entities

    @property
    def n_mediators(self) -> int:
        return len(self.entities) - self.n_original_entities


def _fact_emissions(fact: HyperFact, k: int, variant: str,
                    mediator_id: int | None, sub_rel: int | None,
                    obj_rel: int | None) -> list[Triple]:
    """Edges emitted for one fact; `k` is its index in dataset order."""
    s, r, o = fact.subject, fact.relation, fact.object
    if fact.n_qualifiers == 0:
        return [(s, r, o)]

    if variant in ("equivalent", "no-distinction"):
        b = mediator_id
        out = [] if variant == "no-distinction" else [(s, r, o)]
        out += [(b, sub_rel, s), (b, obj_rel, o)]
        out += [(b, a, v) for a, v in fact.qualifiers]
        return out

    if variant == "plain":
        b = mediator_id
        out = [(b, r, s), (b, r, o)]
        out += [(b, r, v) for _, v in fact.qualifiers]
        return out

    # Clique variants: one edge per unordered pair of participant
    # positions [s, o, v_1, ..., v_n], emitted in lexicographic position
    # order, head = lower position.
    participants = [s, o] + [v for _, v in fact.qualifiers]
    attrs = [a for a, _ in fact.qualifiers]
    out = []
    for i in range(len(participants)):
        for j in range(i + 1, len(participants)):
            if variant == "clique-plain":
                label = r
            else:  # clique-semantic
                if j < 2:
                    label = r                 # the (s, o) pair keeps the primary relation
                else:
                    label = attrs[j - 2]      # edges incident to a value take its attribute;
                                              # value-value pairs take the higher-indexed one
            out.append((participants[i], label, participants[j]))
    return out


def transform(ds: HkgDataset, variant: str = "equivalent",
              split: str | None = None) -> TransformedKg:
    """Transform the selected facts of `ds` into a triple KG.

    Mediator k is named `_med:<k>` where k is the zero-based index of its
    fact in dataset order, so the output is byte-stable for a given
    dataset. `split=None` selects the train+valid+test concatenation.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    ds.validate_labels()
    facts = ds.facts(split)

    entities = ds.entities.copy()
    relations = ds.relations.copy()

    sub_rel: dict[int, int] = {}
    obj_rel: dict[int, int] = {}
    if variant in ("equivalent", "no-distinction"):
        primary = sorted({f.relation for f in facts})
        for r in primary:
            label = ds.relations.label(r)
            sub_rel[r] = relations.intern(label + SUB_SUFFIX)
            obj_rel[r] = relations.intern(label + OBJ_SUFFIX)

    mediator_of: dict[int, int] = {}
    psi: dict[int, int] = {}
    emissions: list[Triple] = []
    plain_facts: list[Triple] = []
    for k, fact in enumerate(facts):
        mediator_id = None
        if fact.n_qualifiers > 0 and variant in STAR_VARIANTS:
            mediator_id = entities.intern(f"{MEDIATOR_PREFIX}{k}")
            mediator_of[mediator_id] = k
            psi[mediator_id] = fact.relation
        if fact.n_qualifiers == 0:
            plain_facts.append((fact.subject, fact.relation, fact.object))
        emissions.extend(_fact_emissions(
            fact, k, variant, mediator_id,
            sub_rel.get(fact.relation), obj_rel.get(fact.relation),
        ))

    triples = tuple(dict.fromkeys(emissions))
    return TransformedKg(
        entities=entities,
        relations=relations,
        triples=triples,
        mediator_of=mediator_of,
        psi=psi,
        variant=variant,
        n_original_entities=len(ds.entities),
        n_original_relations=len(ds.relations),
        source_split=split,
        plain_fact_triples=frozenset(plain_facts),
        edge_emissions=len(emissions),
        triple_set=frozenset(triples),
    )


def _base_relation(kg: TransformedKg, rel_id: int) -> tuple[str, str]:
    """(base label, suffix kind) of an extended relation id."""
    label = kg.relations.label(rel_id)
    if label.endswith(SUB_SUFFIX):
        return label[: -len(SUB_SUFFIX)], "sub"
    if label.endswith(OBJ_SUFFIX):
        return label[: -len(OBJ_SUFFIX)], "obj"
    return label, "plain"


def recover(kg: TransformedKg, *, use_provenance: bool = True) -> list[HyperFact]:
    """Invert the equivalent transformation via motif-structure discovery.

    For each mediator, its unique ``#sub``/``#obj`` edges identify the
    subject, object and base primary relation; the motif triple
    ``(s, r, o)`` must exist; every other edge leaving the mediator is an
    attribute-value qualifier. Triples never consumed as a motif edge
    become plain triple facts.

    A triple can be both the motif edge of some mediator and an
    independent triple fact; the transformation records that provenance
    and `use_provenance=True` (default) replays it. With
    `use_provenance=False` the recovery uses the bare triple structure
    only, and such shared triples are treated as motif-only.
    """
    if kg.variant != "equivalent":
        raise ValidationError(
            f"only the 'equivalent' variant is recoverable, got {kg.variant!r}"
        )
    by_head: dict[int, list[tuple[int, int]]] = {}
    for h, r, t in kg.triples:
        by_head.setdefault(h, []).append((r, t))

    facts: list[HyperFact] = []
    motif_triples: set[Triple] = set()
    for b in sorted(kg.mediator_of):
        edges = by_head.get(b, [])
        subs = [(r, t) for r, t in edges if _base_relation(kg, r)[1] == "sub"]
        objs = [(r, t) for r, t in edges if _base_relation(kg, r)[1] == "obj"]
        if len(subs) != 1 or len(objs) != 1:
            raise StructureError(
                f"mediator {kg.entities.label(b)!r} has {len(subs)} #sub and "
                f"{len(objs)} #obj edges; expected exactly one of each"
            )
        (sub_r, s), (obj_r, o) = subs[0], objs[0]
        base_s, base_o = _base_relation(kg, sub_r)[0], _base_relation(kg, obj_r)[0]
        if base_s != base_o:
            raise StructureError(
                f"mediator {kg.entities.label(b)!r} mixes base relations "
                f"{base_s!r} and {base_o!r}"
            )
        if base_s not in kg.relations:
            raise StructureError(f"base relation {base_s!r} missing from vocabulary")
        r = kg.relations.id(base_s)
        if r >= kg.n_original_relations:
            raise StructureError(f"base relation {base_s!r} is not an original relation")
        if (s, r, o) not in kg.triple_set:
            raise StructureError(
                f"missing motif triple ({kg.entities.label(s)!r}, {base_s!r}, "
                f"{kg.entities.label(o)!r}) for mediator {kg.entities.label(b)!r}"
            )
        quals = []
        for rel, t in edges:
            if (rel, t) in (subs[0], objs[0]):
                continue
            if _base_relation(kg, rel)[1] != "plain":
                raise StructureError(
                    f"unexpected extra {kg.relations.label(rel)!r} edge on mediator "
                    f"{kg.entities.label(b)!r}"
                )
            quals.append((rel, t))
        for ent in (s, o, *(v for _, v in quals)):
            if kg.is_mediator(ent):
                raise StructureError(
                    f"mediator {kg.entities.label(ent)!r} appears as a fact participant"
                )
        motif_triples.add((s, r, o))
        facts.append(canonical_fact(s, r, o, quals))

    mediators = set(kg.mediator_of)
    for h, r, t in kg.triples:
        if h in mediators:
            continue
        if _base_relation(kg, r)[1] != "plain":
            raise StructureError(
                f"relation {kg.relations.label(r)!r} used outside a mediator motif"
            )
        if (h, r, t) in motif_triples and not (
            use_provenance and (h, r, t) in kg.plain_fact_triples
        ):
            continue
        facts.append(canonical_fact(h, r, t))
    return facts


@dataclass(frozen=True, slots=True)
class TransformStats:
    """Actual vs closed-form expected size of a transformed KG."""

    variant: str
    node_count: int
    relation_count: int
    edge_emissions: int
    unique_edge_count: int
    expected_nodes: int
    expected_relations: int
    expected_edges: int

    def diffs(self) -> dict[str, tuple[int, int]]:
        out = {}
        if self.node_count != self.expected_nodes:
            out["nodes"] = (self.node_count, self.expected_nodes)
        if self.relation_count != self.expected_relations:
            out["relations"] = (self.relation_count, self.expected_relations)
        if self.edge_emissions != self.expected_edges:
            out["edges"] = (self.edge_emissions, self.expected_edges)
        return out


def expected_counts(ds: HkgDataset, variant: str,
                    split: str | None = None) -> tuple[int, int, int]:
    """Closed-form (nodes, relations, edges) for a dataset and variant.

    Edge counts are emission counts: per qualifier-bearing fact with n
    qualifiers, the star variants emit n+3 (equivalent) or n+2 (plain and
    no-distinction) edges and the clique variants emit C(n+2, 2); plain
    triple facts emit one edge each.
    """
    stats = dataset_stats(ds, split)
    facts = ds.facts(split)
    qual_ns = [f.n_qualifiers for f in facts if f.n_qualifiers > 0]

    if variant in STAR_VARIANTS:
        nodes = stats.n_e + stats.n_qua_facts
    else:
        nodes = stats.n_e

    if variant in ("equivalent", "no-distinction"):
        relations = stats.n_r + 2 * stats.n_r_pri
    else:
        relations = stats.n_r

    if variant == "equivalent":
        edges = stats.n_pri_facts + sum(3 + n for n in qual_ns)
    elif variant in ("plain", "no-distinction"):
        edges = stats.n_pri_facts + sum(2 + n for n in qual_ns)
    else:
        edges = stats.n_pri_facts + sum((n + 2) * (n + 1) // 2 for n in qual_ns)
    return nodes, relations, edges


def verify_stats(kg: TransformedKg, ds: HkgDataset) -> TransformStats:
    """Check the exact size equalities of `kg` against its source dataset.

    Raises ValidationError with a per-term diff on any mismatch.
    """
    nodes, relations, edges = expected_counts(ds, kg.variant, kg.source_split)
    stats = TransformStats(
        variant=kg.variant,
        node_count=len(kg.entities),
        relation_count=len(kg.relations),
        edge_emissions=kg.edge_emissions,
        unique_edge_count=len(kg.triples),
        expected_nodes=nodes,
        expected_relations=relations,
        expected_edges=edges,
    )
    diffs = stats.diffs()
    if diffs:
        detail = ", ".join(f"{k}: actual {a} != expected {e}" for k, (a, e) in diffs.items())
        raise ValidationError(f"transform statistics mismatch ({kg.variant}): {detail}")
    return stats


def write_kg(kg: TransformedKg, path: str | Path) -> None:
    """Write triples as `head<TAB>relation<TAB>tail` plus a JSON sidecar.

    The sidecar (`<path>.meta.json`) carries the full extended vocabulary
    order, mediator bookkeeping and plain-fact provenance, so a KG read
    back from disk is byte-identical to the in-memory one.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in kg.triples:
            fh.write(f"{kg.entities.label(h)}\t{kg.relations.label(r)}\t{kg.entities.label(t)}\n")
    meta = {
        "variant": kg.variant,
        "split": kg.source_split,
        "n_original_entities": kg.n_original_entities,
        "n_original_relations": kg.n_original_relations,
        "edge_emissions": kg.edge_emissions,
        "entities": list(kg.entities.labels),
        "relations": list(kg.relations.labels),
        "mediators": [
            {"label": kg.entities.label(b), "fact_index": k,
             "psi": kg.relations.label(kg.psi[b])}
            for b, k in sorted(kg.mediator_of.items())
        ],
        "plain_facts": [
            [kg.entities.label(h), kg.relations.label(r), kg.entities.label(t)]
            for h, r, t in sorted(kg.plain_fact_triples)
        ],
    }
    with open(sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, ensure_ascii=False, indent=1)
        fh.write("\n")


def sidecar_path(path: str | Path) -> Path:
    return Path(str(path) + ".meta.json")


def read_kg(path: str | Path) -> TransformedKg:
    """Read a transformed KG written by `write_kg`."""
    path = Path(path)
    with open(sidecar_path(path), encoding="utf-8") as fh:
        meta = json.load(fh)
    entities = Vocab(meta["entities"])
    relations = Vocab(meta["relations"])
    triples: list[Triple] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 3:
                raise ValidationError(f"{path}:{lineno}: expected 3 fields, got {len(fields)}")
            triples.append((entities.id(fields[0]), relations.id(fields[1]),
                            entities.id(fields[2])))
    mediator_of = {entities.id(m["label"]): m["fact_index"] for m in meta["mediators"]}
    psi = {entities.id(m["label"]): relations.id(m["psi"]) for m in meta["mediators"]}
    return TransformedKg(
        entities=entities,
        relations=relations,
        triples=tuple(triples),
        mediator_of=mediator_of,
        psi=psi,
        variant=meta["variant"],
        n_original_entities=meta["n_original_entities"],
        n_original_relations=meta["n_original_relations"],
        source_split=meta["split"],
        plain_fact_triples=frozenset(
            (entities.id(h), relations.id(r), entities.id(t))
            for h, r, t in meta["plain_facts"]
        ),
        edge_emissions=meta["edge_emissions"],
        triple_set=frozenset(triples),
    )
