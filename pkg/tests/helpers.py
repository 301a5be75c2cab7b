"""Shared test utilities: fixture loading, the soundness recorder, and a truth-table oracle."""

from __future__ import annotations

import itertools
import random
import threading
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import mpmath

from reqsmith.formula import (
    FALSE,
    TRUE,
    And,
    Bool,
    Iff,
    Implies,
    Ite,
    Not,
    Or,
    Schema,
    Sort,
    evaluate,
    print_term,
)
from reqsmith.model import load_model
from reqsmith.solver import SessionPool, SolverConfig, add_check_observer, remove_check_observer

DATA = Path(str(resources.files("reqsmith") / "data"))
HEMO = DATA / "hemodialysis"
CEGR = DATA / "cegr"


def make_pool(schema, size=2, **kw) -> SessionPool:
    return SessionPool(SolverConfig(**kw), schema, size)


def hemodialysis_model():
    return load_model(HEMO / "schema.json", HEMO / "constraints.json", HEMO / "requirements.json", HEMO / "encodings.json")


def cegr_model():
    return load_model(CEGR / "schema.json", CEGR / "constraints.json", CEGR / "requirements.json", CEGR / "encodings.json")


@dataclass
class SoundnessRecorder:
    """Check observer: verifies every SAT model on the spot and keeps UNSAT cores for re-checking."""

    sat_checked: int = 0
    witness_failures: list = field(default_factory=list)
    cores: dict = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def __call__(self, schema: Schema, active: dict, result) -> None:
        if result.sat and result.model is not None:
            bad = [label for label, t in active.items() if evaluate(t, result.model) is not True]
            with self._lock:
                self.sat_checked += 1
                if bad:
                    self.witness_failures.append((bad, dict(result.model)))
        elif result.unsat and result.unsat_core is not None:
            terms = tuple(sorted((label, print_term(active[label]), active[label]) for label in result.unsat_core))
            with self._lock:
                self.cores.setdefault((schema, tuple(t[:2] for t in terms)), (schema, terms))

    def __enter__(self):
        add_check_observer(self)
        return self

    def __exit__(self, *exc):
        remove_check_observer(self)

    def recheck_cores(self) -> tuple[int, list]:
        """Assert each recorded core alone in a fresh solver process; returns (checked, failures)."""
        failures = []
        with self._lock:
            pending = list(self.cores.values())
        pools: dict = {}
        try:
            for schema, terms in pending:
                if schema not in pools:
                    pools[schema] = SessionPool(SolverConfig(fresh_per_query=True), schema, 1)
                r = pools[schema].check([(label, t) for label, _, t in terms])
                if not r.unsat:
                    failures.append([label for label, _, _ in terms])
        finally:
            for pool in pools.values():
                pool.close()
        return len(pending), failures


# ---------------------------------------------------------------------------
# Boolean truth-table oracle


def bool_schema(n: int) -> Schema:
    return Schema.of(**{f"b{i}": Sort.BOOL for i in range(n)})


def random_bool_term(rng: random.Random, names, depth: int = 3):
    if depth == 0 or rng.random() < 0.25:
        r = rng.random()
        if r < 0.05:
            return TRUE
        if r < 0.1:
            return FALSE
        return Bool(rng.choice(names))
    op = rng.choice(["not", "and", "or", "imp", "iff", "ite"])
    sub = lambda: random_bool_term(rng, names, depth - 1)  # noqa: E731
    if op == "not":
        return Not(sub())
    if op == "and":
        return And(tuple(sub() for _ in range(rng.randint(1, 3))))
    if op == "or":
        return Or(tuple(sub() for _ in range(rng.randint(1, 3))))
    if op == "imp":
        return Implies(sub(), sub())
    if op == "iff":
        return Iff(sub(), sub())
    return Ite(sub(), sub(), sub())


def assignments(schema: Schema):
    names = [v.name for v in schema]
    for bits in itertools.product([False, True], repeat=len(names)):
        yield dict(zip(names, bits))


def satisfiable(schema: Schema, terms) -> bool:
    return any(all(evaluate(t, a) for t in terms) for a in assignments(schema))


def random_bool_model(rng: random.Random, n_vars: int, n_reqs: int, n_constraints: int = 1):
    """Random all-Boolean assembled model; roughly half the requirements are conditional."""
    from reqsmith.model import DomainConstraints, Encoding, Kind, Requirement, assemble

    schema = bool_schema(n_vars)
    names = [v.name for v in schema]
    constraints = DomainConstraints(
        tuple((f"dom_c{i}", random_bool_term(rng, names, 2)) for i in range(n_constraints))
    )
    reqs, encs = [], []
    for i in range(n_reqs):
        rid = f"q{i}"
        if rng.random() < 0.5:
            reqs.append(Requirement(rid, f"requirement {i}", Kind.CONDITIONAL))
            encs.append(Encoding(rid, random_bool_term(rng, names, 2), random_bool_term(rng, names, 2)))
        else:
            reqs.append(Requirement(rid, f"requirement {i}", Kind.INVARIANT))
            encs.append(Encoding(rid, None, random_bool_term(rng, names, 3)))
    return assemble(schema, constraints, reqs, encs)


def oracle_audit(m) -> tuple[str, dict]:
    """Audit verdicts by truth-table enumeration, independent of the solver.

    Returns (consistency, {req_id: (vacuous, violatable, redundant)}) using
    the string values of the audit Status enum.
    """
    table = list(assignments(m.schema))
    holds = lambda t, a: evaluate(t, a) is True  # noqa: E731
    in_c = [a for a in table if all(holds(t, a) for _, t in m.constraints)]
    wholes = {rid: m.encodings[rid].whole() for rid in m.ids}
    consistent = any(all(holds(w, a) for w in wholes.values()) for a in in_c)
    out = {}
    for rid in m.ids:
        enc = m.encodings[rid]
        if enc.guard is None:
            vacuous = "not_applicable"
        else:
            vacuous = "no" if any(holds(enc.guard, a) for a in in_c) else "yes"
        broken = [a for a in in_c if not holds(wholes[rid], a)]
        violatable = "yes" if broken else "no"
        others = [w for j, w in wholes.items() if j != rid]
        escapes = any(all(holds(w, a) for w in others) for a in broken)
        redundant = "no" if escapes else "yes"
        out[rid] = (vacuous, violatable, redundant)
    return ("yes" if consistent else "no"), out


def oracle_agree(schema: Schema, constraints, a, b) -> tuple[bool, bool]:
    """(a permits a state b forbids, b permits a state a forbids) under the constraints."""
    in_c = [x for x in assignments(schema) if all(evaluate(t, x) for _, t in constraints)]
    a_not_b = any(evaluate(a, x) and not evaluate(b, x) for x in in_c)
    b_not_a = any(evaluate(b, x) and not evaluate(a, x) for x in in_c)
    return a_not_b, b_not_a


def reference_wilson(s, n, confidence=0.95):
    """High-precision Wilson interval computed with mpmath, independent of the stdlib normal quantile."""
    with mpmath.workdps(50):
        z = mpmath.sqrt(2) * mpmath.erfinv(mpmath.mpf(confidence))
        n_, p = mpmath.mpf(n), mpmath.mpf(s) / n
        denom = 1 + z**2 / n_
        centre = (p + z**2 / (2 * n_)) / denom
        half = z * mpmath.sqrt(p * (1 - p) / n_ + z**2 / (4 * n_**2)) / denom
        return float(max(0, centre - half)), float(min(1, centre + half))
