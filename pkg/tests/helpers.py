"""Shared test utilities: dataset generators and independent oracles.

The oracles here deliberately re-derive expected values with different
code paths (loops, regexes, brute force) than the library implementations
they check.
"""

from __future__ import annotations

import re

import numpy as np

from hkgx.core import HkgDataset, HyperFact, Vocab, canonical_fact


def random_dataset(
    seed: int,
    n_facts: int = 50,
    n_entities: int = 20,
    n_relations: int = 5,
    max_arity: int = 6,
    split_fracs: tuple[float, float] = (0.7, 0.85),
) -> HkgDataset:
    """Random HKG with self-loops and relations reused as attributes."""
    rng = np.random.default_rng(seed)
    entities = Vocab(f"e{i}" for i in range(n_entities))
    relations = Vocab(f"r{i}" for i in range(n_relations))
    facts = []
    for _ in range(n_facts):
        s = int(rng.integers(0, n_entities))
        # occasional self-loop
        o = s if rng.random() < 0.08 else int(rng.integers(0, n_entities))
        r = int(rng.integers(0, n_relations))
        n = int(rng.integers(0, max_arity + 1))
        quals = [(int(rng.integers(0, n_relations)), int(rng.integers(0, n_entities)))
                 for _ in range(n)]
        facts.append(canonical_fact(s, r, o, quals))
    a = int(len(facts) * split_fracs[0])
    b = int(len(facts) * split_fracs[1])
    return HkgDataset.build(entities, relations, facts[:a], facts[a:b], facts[b:])


def oracle_parse_jf17k(line: str) -> tuple[str, str, str, list[tuple[str, str]]]:
    """Independent JF17K-style parser built on a regex token scan."""
    tokens = re.findall(r"\S+", line)
    assert len(tokens) >= 3, "oracle: need relation plus at least two entities"
    rel = tokens[0]
    quals = []
    for pos, value in enumerate(tokens[3:]):
        quals.append((rel + "_" + str(pos + 1), value))
    return (tokens[1], rel + "_so", tokens[2], quals)


def oracle_parse_wikipeople(record: dict) -> tuple[str, str, str, list[tuple[str, str]]]:
    """Independent WikiPeople-style parser via explicit key partitioning."""
    h_keys = sorted(k for k in record if k.endswith("_h") and isinstance(record[k], str))
    t_keys = sorted(k for k in record if k.endswith("_t") and isinstance(record[k], str))
    assert len(h_keys) == 1 and len(t_keys) == 1
    assert h_keys[0][:-2] == t_keys[0][:-2]
    quals = []
    for key in record:
        if key in (h_keys[0], t_keys[0]) or (key == "N" and isinstance(record[key], int)):
            continue
        value = record[key]
        for v in (value if isinstance(value, list) else [value]):
            quals.append((key, v))
    return (record[h_keys[0]], h_keys[0][:-2], record[t_keys[0]], quals)


def oracle_equivalent_emission(fact: HyperFact, mediator: int | None,
                               sub_rel: int | None, obj_rel: int | None) -> list:
    """Brute-force per-fact edge list for the equivalent transformation."""
    edges = [(fact.subject, fact.relation, fact.object)]
    if fact.n_qualifiers > 0:
        edges.append((mediator, sub_rel, fact.subject))
        edges.append((mediator, obj_rel, fact.object))
        for a, v in fact.qualifiers:
            edges.append((mediator, a, v))
    return edges


def oracle_multilinear_score(rhat: np.ndarray, entity_rows: list[np.ndarray]) -> float:
    """Loop-based multilinear product, one coordinate at a time."""
    total = 0.0
    d = len(rhat)
    for j in range(d):
        term = rhat[j]
        for row in entity_rows:
            term *= row[j]
        total += term
    return total


def finite_difference_grads(fn, arrays: dict[str, np.ndarray],
                            h: float = 1e-6) -> dict[str, np.ndarray]:
    """Central finite differences of a scalar function of named arrays."""
    grads = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = fn(arrays)
            flat[i] = orig - h
            f_minus = fn(arrays)
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * h)
        grads[name] = g
    return grads


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """|a - n| / max(1, |a|, |n|), elementwise maximum."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    if a.size == 0:
        return 0.0
    return float((np.abs(a - n) / denom).max())


def check_op(build, shapes, seeds=range(10), scale=1.0, tol=1e-4, h=1e-6):
    """FD-check d(sum of op output)/d(inputs) at several random points.

    `build(tape, tensors) -> Tensor` applies the op under test; the loss
    is the sum of its output.
    """
    from hkgx.numeric import Tape
    from hkgx.numeric.tape import parameter

    for seed in seeds:
        rng = np.random.default_rng(seed)
        arrays = {f"x{i}": rng.uniform(-1, 1, size=s) * scale
                  for i, s in enumerate(shapes)}

        def run(arrs, want_grads=False):
            tape = Tape()
            tensors = {k: parameter(v.copy(), k) for k, v in arrs.items()}
            out = build(tape, tensors)
            loss = out if out.data.shape == () else tape.sum(out)
            if not want_grads:
                return float(loss.data)
            tape.backward(loss)
            return {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                    for k, t in tensors.items()}

        analytic = run(arrays, want_grads=True)
        numeric = finite_difference_grads(lambda a: run(a), arrays, h=h)
        for name in arrays:
            err = max_relative_error(analytic[name], numeric[name])
            assert err < tol, f"{name} grad error {err:.3g} at seed {seed}"
