"""Core in-memory model for hyper-relational knowledge graphs (HKGs).

A hyper-relational fact is a primary triple (subject, relation, object)
plus an ordered list of attribute-value qualifiers. Entities and
relations live in two disjoint dense-id vocabularies; every other module
operates on ids only.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

from .errors import ValidationError, VocabularyError

SPLITS = ("train", "valid", "test")

# Reserved label space. Relation labels containing '#' would collide with
# the '#sub'/'#obj' relations minted by the equivalent transformation, and
# entity labels starting with '_med:' would collide with mediator entities.
RESERVED_RELATION_CHAR = "#"
MEDIATOR_PREFIX = "_med:"


class Vocab:
    """Dense label<->id interning table.

    Ids are contiguous from 0 and assigned in first-`intern` order, which
    makes id assignment reproducible from input order alone.
    """

    __slots__ = ("_labels", "_ids")

    def __init__(self, labels: Iterable[str] = ()) -> None:
        self._labels: list[str] = []
        self._ids: dict[str, int] = {}
        for label in labels:
            self.intern(label)

    def intern(self, label: str) -> int:
        """Return the id for `label`, adding it if unseen."""
        ident = self._ids.get(label)
        if ident is None:
            ident = len(self._labels)
            self._ids[label] = ident
            self._labels.append(label)
        return ident

    def id(self, label: str) -> int:
        try:
            return self._ids[label]
        except KeyError:
            raise VocabularyError(f"unknown label {label!r}") from None

    def label(self, ident: int) -> str:
        if 0 <= ident < len(self._labels):
            return self._labels[ident]
        raise VocabularyError(f"id {ident} out of range [0, {len(self._labels)})")

    def copy(self) -> "Vocab":
        return Vocab(self._labels)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(self._labels)

    def __len__(self) -> int:
        return len(self._labels)

    def __contains__(self, label: object) -> bool:
        return label in self._ids

    def __iter__(self) -> Iterator[str]:
        return iter(self._labels)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocab) and self._labels == other._labels

    def __repr__(self) -> str:
        return f"Vocab({len(self)} labels)"


@dataclass(frozen=True, slots=True)
class HyperFact:
    """One hyper-relational fact in canonical form.

    Qualifiers are a tuple of (attribute, value) id pairs, sorted by
    (attribute, value) with exact duplicates removed. A fact with no
    qualifiers is a plain triple.
    """

    subject: int
    relation: int
    object: int
    qualifiers: tuple[tuple[int, int], ...] = ()

    @property
    def n_qualifiers(self) -> int:
        return len(self.qualifiers)

    def entity_positions(self) -> list[tuple[str, int, int]]:
        """All entity slots as (kind, qualifier_index, entity_id).

        kind is 'subject', 'object' or 'value'; qualifier_index is -1 for
        the triple slots and the 0-based qualifier index for values.
        """
        slots = [("subject", -1, self.subject), ("object", -1, self.object)]
        slots.extend(("value", i, v) for i, (_, v) in enumerate(self.qualifiers))
        return slots

    def replace_entity(self, kind: str, qualifier_index: int, entity: int) -> "HyperFact":
        """Copy of this fact with one entity slot substituted.

        The result is NOT re-canonicalized: corruptions used for negative
        sampling and ranking keep their slot structure.
        """
        if kind == "subject":
            return HyperFact(entity, self.relation, self.object, self.qualifiers)
        if kind == "object":
            return HyperFact(self.subject, self.relation, entity, self.qualifiers)
        if kind == "value":
            quals = list(self.qualifiers)
            attr, _ = quals[qualifier_index]
            quals[qualifier_index] = (attr, entity)
            return HyperFact(self.subject, self.relation, self.object, tuple(quals))
        raise ValueError(f"unknown position kind {kind!r}")

    def flat(self) -> tuple[int, ...]:
        """Flat id tuple (s, r, o, a1, v1, ..., an, vn)."""
        out = [self.subject, self.relation, self.object]
        for a, v in self.qualifiers:
            out.extend((a, v))
        return tuple(out)


def canonical_fact(
    subject: int,
    relation: int,
    object_: int,
    qualifiers: Iterable[tuple[int, int]] = (),
    *,
    n_entities: int | None = None,
    n_relations: int | None = None,
) -> HyperFact:
    """Build a canonical HyperFact: qualifiers sorted, duplicates dropped.

    Idempotent and insensitive to the input order of the qualifier pairs.
    When vocabulary sizes are supplied, every id is bounds-checked.
    """
    quals = tuple(sorted(set((int(a), int(v)) for a, v in qualifiers)))
    fact = HyperFact(int(subject), int(relation), int(object_), quals)
    if n_entities is not None or n_relations is not None:
        _check_fact_ids(fact, n_entities, n_relations)
    return fact


def _check_fact_ids(fact: HyperFact, n_entities: int | None, n_relations: int | None) -> None:
    def ent(i: int, what: str) -> None:
        if i < 0 or (n_entities is not None and i >= n_entities):
            raise VocabularyError(f"{what} entity id {i} outside vocabulary of size {n_entities}")

    def rel(i: int, what: str) -> None:
        if i < 0 or (n_relations is not None and i >= n_relations):
            raise VocabularyError(f"{what} relation id {i} outside vocabulary of size {n_relations}")

    ent(fact.subject, "subject")
    ent(fact.object, "object")
    rel(fact.relation, "primary")
    for a, v in fact.qualifiers:
        rel(a, "attribute")
        ent(v, "value")


@dataclass(frozen=True)
class HkgDataset:
    """Interned vocabularies plus train/valid/test fact splits.

    Immutable after construction; safe for concurrent readers. Facts are
    canonical and de-duplicated within each split (first occurrence kept).
    """

    entities: Vocab
    relations: Vocab
    train: tuple[HyperFact, ...]
    valid: tuple[HyperFact, ...]
    test: tuple[HyperFact, ...]
    primary_relations: frozenset[int] = field(default=frozenset())
    max_qualifiers: int = 0

    @staticmethod
    def build(
        entities: Vocab,
        relations: Vocab,
        train: Sequence[HyperFact],
        valid: Sequence[HyperFact],
        test: Sequence[HyperFact],
    ) -> "HkgDataset":
        n_e, n_r = len(entities), len(relations)
        splits = []
        for facts in (train, valid, test):
            seen: dict[HyperFact, None] = {}
            for f in facts:
                c = canonical_fact(
                    f.subject, f.relation, f.object, f.qualifiers,
                    n_entities=n_e, n_relations=n_r,
                )
                seen.setdefault(c)
            splits.append(tuple(seen))
        all_facts = [f for s in splits for f in s]
        primary = frozenset(f.relation for f in all_facts)
        max_q = max((f.n_qualifiers for f in all_facts), default=0)
        return HkgDataset(entities, relations, *splits,
                          primary_relations=primary, max_qualifiers=max_q)

    def split(self, name: str) -> tuple[HyperFact, ...]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}; expected one of {SPLITS}")
        return getattr(self, name)

    def facts(self, split: str | None = None) -> tuple[HyperFact, ...]:
        """Facts of one split, or the train+valid+test concatenation."""
        if split is None:
            return self.train + self.valid + self.test
        return self.split(split)

    def vocab_hash(self) -> str:
        """Digest over both vocabularies in id order; pins checkpoints to data."""
        h = hashlib.sha256()
        for label in self.entities:
            h.update(label.encode("utf-8") + b"\x00")
        h.update(b"\x01")
        for label in self.relations:
            h.update(label.encode("utf-8") + b"\x00")
        return h.hexdigest()

    def validate_labels(self) -> None:
        """Reject labels that collide with the transformation's namespaces."""
        for label in self.relations:
            if RESERVED_RELATION_CHAR in label:
                raise ValidationError(
                    f"relation label {label!r} contains reserved character "
                    f"{RESERVED_RELATION_CHAR!r}"
                )
        for label in self.entities:
            if label.startswith(MEDIATOR_PREFIX):
                raise ValidationError(
                    f"entity label {label!r} uses reserved mediator prefix "
                    f"{MEDIATOR_PREFIX!r}"
                )


@dataclass(frozen=True, slots=True)
class DatasetStats:
    """Headline counts of a dataset (or one split of it).

    n_e / n_r are always full vocabulary sizes; the fact-derived counts
    cover the selected facts. A relation may be counted both as primary
    and as qualifier, so n_r_pri + n_r_qua may exceed n_r.
    """

    n_e: int
    n_r: int
    n_r_pri: int
    n_r_qua: int
    n_a: int
    n_pri_facts: int
    n_qua_facts: int
    n_facts: int


def dataset_stats(ds: HkgDataset, split: str | None = None) -> DatasetStats:
    """Counts over the union of splits, or one split when given."""
    facts = ds.facts(split)
    primary = {f.relation for f in facts}
    qualifier = {a for f in facts for a, _ in f.qualifiers}
    n_qua = sum(1 for f in facts if f.n_qualifiers > 0)
    return DatasetStats(
        n_e=len(ds.entities),
        n_r=len(ds.relations),
        n_r_pri=len(primary),
        n_r_qua=len(qualifier),
        n_a=max((f.n_qualifiers for f in facts), default=0),
        n_pri_facts=len(facts) - n_qua,
        n_qua_facts=n_qua,
        n_facts=len(facts),
    )
