"""Parsers for the three raw benchmark layouts and the canonical format.

Raw layouts:

* JF17K-style (also FB-AUTO): one fact per line, whitespace separated,
  ``relation subject object value1 value2 ...``. The n+2-ary relation
  ``r`` is split into a primary relation ``r_so`` and positional
  attributes ``r_1 .. r_n``.
* WikiPeople-style: one JSON object per line mapping role labels to
  values, with exactly one ``<stem>_h`` / ``<stem>_t`` pair naming the
  subject and object; the stem becomes the primary relation and every
  other role:value entry becomes a qualifier.
* Canonical interchange: one fact per line, tab separated,
  ``s r o a1 v1 a2 v2 ...`` using string labels.

Vocabulary ids are assigned by first occurrence scanning train, valid,
test in order, so parsing the same bytes always yields the same dataset.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .core import SPLITS, HkgDataset, HyperFact, Vocab, canonical_fact
from .errors import FormatError, ValidationError

log = logging.getLogger(__name__)

FORMATS = ("jf17k", "fbauto", "wikipeople", "canonical")

# A labeled fact: subject, primary relation, object, [(attribute, value)].
LabelFact = tuple[str, str, str, list[tuple[str, str]]]

# WikiPeople raw files carry an arity bookkeeping key "N" with an integer
# value; it is metadata, not a qualifier role.
_WIKIPEOPLE_ARITY_KEY = "N"


def parse_jf17k_line(line: str) -> LabelFact:
    """Convert one JF17K-style line to a labeled fact.

    The first two entities are subject and object; the remaining ones
    become qualifier values with attributes named by position.
    """
    tokens = line.split()
    if len(tokens) < 3:
        raise FormatError(f"expected at least 3 fields (relation + 2 entities), got {len(tokens)}")
    if any(t == "" for t in tokens):
        raise FormatError("empty field")
    raw_rel, subj, obj = tokens[0], tokens[1], tokens[2]
    quals = [(f"{raw_rel}_{i}", value) for i, value in enumerate(tokens[3:], start=1)]
    return (subj, f"{raw_rel}_so", obj, quals)


def parse_wikipeople_record(record: dict) -> LabelFact:
    """Convert one WikiPeople role->value map to a labeled fact.

    Requires exactly one ``_h`` and one ``_t`` role with equal stems.
    Multi-valued qualifier roles (value given as a list) are expanded
    into one qualifier pair per value.
    """
    heads = [k for k, v in record.items() if k.endswith("_h") and isinstance(v, str)]
    tails = [k for k, v in record.items() if k.endswith("_t") and isinstance(v, str)]
    if len(heads) != 1 or len(tails) != 1:
        raise FormatError(
            f"expected exactly one _h and one _t role, got {len(heads)} and {len(tails)}"
        )
    stem_h, stem_t = heads[0][:-2], tails[0][:-2]
    if stem_h != stem_t:
        raise FormatError(f"subject/object role stems differ: {heads[0]!r} vs {tails[0]!r}")

    quals: list[tuple[str, str]] = []
    for role, value in record.items():
        if role in (heads[0], tails[0]):
            continue
        if role == _WIKIPEOPLE_ARITY_KEY and isinstance(value, int):
            continue
        values = value if isinstance(value, list) else [value]
        for v in values:
            if not isinstance(v, str):
                raise FormatError(f"qualifier role {role!r} has non-string value {v!r}")
            quals.append((role, v))
    return (record[heads[0]], stem_h, record[tails[0]], quals)


def parse_canonical_line(line: str) -> LabelFact:
    """Parse one tab-separated canonical interchange line."""
    fields = line.rstrip("\n").split("\t")
    if len(fields) < 3:
        raise FormatError(f"expected at least 3 tab-separated fields, got {len(fields)}")
    if (len(fields) - 3) % 2 != 0:
        raise FormatError(f"odd number of trailing qualifier fields ({len(fields) - 3})")
    if any(f == "" for f in fields):
        raise FormatError("empty field")
    s, r, o = fields[0], fields[1], fields[2]
    quals = [(fields[i], fields[i + 1]) for i in range(3, len(fields), 2)]
    return (s, r, o, quals)


def _split_files(directory: Path, fmt: str) -> dict[str, Path]:
    """Locate the train/valid/test files for a dataset directory."""
    out: dict[str, Path] = {}
    for split in SPLITS:
        candidates = [directory / f"{split}.txt"]
        if fmt == "wikipeople":
            candidates = [
                directory / f"{split}.json",
                directory / f"n-ary_{split}.json",
                directory / f"{split}.txt",
            ]
        found = next((c for c in candidates if c.is_file()), None)
        if found is None:
            raise FileNotFoundError(
                f"missing {split} file in {directory} (looked for "
                + ", ".join(c.name for c in candidates) + ")"
            )
        out[split] = found
    return out


def _parse_file(path: Path, fmt: str, skip_malformed: bool) -> list[LabelFact]:
    facts: list[LabelFact] = []
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                if fmt in ("jf17k", "fbauto"):
                    facts.append(parse_jf17k_line(line))
                elif fmt == "wikipeople":
                    try:
                        record = json.loads(line)
                    except json.JSONDecodeError as exc:
                        raise FormatError(f"invalid JSON: {exc}") from None
                    if not isinstance(record, dict):
                        raise FormatError("record is not a JSON object")
                    facts.append(parse_wikipeople_record(record))
                elif fmt == "canonical":
                    facts.append(parse_canonical_line(line))
                else:
                    raise ValueError(f"unknown format {fmt!r}")
            except FormatError as exc:
                if skip_malformed:
                    skipped += 1
                    log.warning("skipping malformed line: file=%s line=%d error=%s",
                                path, lineno, exc)
                else:
                    raise FormatError(f"{path}:{lineno}: {exc}") from None
    if skipped:
        log.warning("skipped malformed lines: file=%s count=%d", path, skipped)
    return facts


def load_dataset(
    directory: str | Path,
    fmt: str,
    *,
    skip_malformed: bool = False,
    strict_transductive: bool = False,
) -> HkgDataset:
    """Parse a dataset directory into an HkgDataset.

    Ids are assigned by first occurrence over train, then valid, then
    test. With `strict_transductive`, entities or relations first seen
    outside the train split are rejected instead of retained.
    """
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    directory = Path(directory)
    files = _split_files(directory, fmt)
    raw = {split: _parse_file(files[split], fmt, skip_malformed) for split in SPLITS}
    if not raw["train"]:
        raise ValidationError(f"train split {files['train']} contains no facts")

    entities, relations = Vocab(), Vocab()
    splits: dict[str, list[HyperFact]] = {}
    for split in SPLITS:
        id_facts = []
        for s, r, o, quals in raw[split]:
            if strict_transductive and split != "train":
                unseen = [x for x in (s, o, *(v for _, v in quals)) if x not in entities]
                unseen += [x for x in (r, *(a for a, _ in quals)) if x not in relations]
                if unseen:
                    raise ValidationError(
                        f"{split} split introduces labels unseen in train: {unseen[:5]}"
                    )
            id_facts.append(canonical_fact(
                entities.intern(s),
                relations.intern(r),
                entities.intern(o),
                [(relations.intern(a), entities.intern(v)) for a, v in quals],
            ))
        splits[split] = id_facts

    ds = HkgDataset.build(entities, relations, splits["train"], splits["valid"], splits["test"])
    ds.validate_labels()
    return ds


def fact_to_canonical_line(entities: Vocab, relations: Vocab, fact: HyperFact) -> str:
    fields = [entities.label(fact.subject),
              relations.label(fact.relation),
              entities.label(fact.object)]
    for a, v in fact.qualifiers:
        fields.extend((relations.label(a), entities.label(v)))
    for f in fields:
        if "\t" in f or "\n" in f:
            raise ValidationError(f"label {f!r} contains a tab or newline")
    return "\t".join(fields)


def write_canonical(ds: HkgDataset, directory: str | Path) -> None:
    """Write train/valid/test canonical files; inverse of canonical load."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for split in SPLITS:
        with open(directory / f"{split}.txt", "w", encoding="utf-8") as fh:
            for fact in ds.split(split):
                fh.write(fact_to_canonical_line(ds.entities, ds.relations, fact) + "\n")
