"""Autoformalization with a bounded syntactic repair loop."""

from __future__ import annotations

import json
import re
from typing import Iterable, Optional, Sequence

from ..formula import (
    TRUE,
    FormulaError,
    Implies,
    Schema,
    Sort,
    Term,
    check_sorts,
    conj,
    parse_sexpr,
    print_term,
    read_sexprs,
    sort_of,
)
from ..model import DomainConstraints, Encoding, Kind, Provenance, Requirement, label_for
from ..solver import ProtocolError, SessionPool
from .providers import CompletionRequest, Provider, Transcript

MAX_RETRIES = 5


class FormalizationError(Exception):
    pass


class RetryBudgetExhausted(FormalizationError):
    def __init__(self, last_error: str, transcript: Transcript):
        super().__init__(f"retry budget exhausted; last error: {last_error}")
        self.last_error = last_error
        self.transcript = transcript


class CoverageGap(RetryBudgetExhausted):
    def __init__(self, missing: Sequence[str], transcript: Transcript):
        super().__init__(f"no predicate for {', '.join(missing)}", transcript)
        self.missing = list(missing)


class _Coverage(FormalizationError):
    def __init__(self, missing: list[str]):
        super().__init__(f"missing predicates for: {', '.join(label_for(m) for m in missing)}")
        self.missing = missing


_FENCE = re.compile(r"```[a-zA-Z0-9_-]*\n?|```")


def strip_fences(text: str) -> str:
    return _FENCE.sub("", text)


def schema_block(schema: Schema, C: DomainConstraints) -> str:
    lines = ["SCHEMA (name : sort ; description):"]
    lines += [f"  {v.name} : {v.sort.value} ; {v.description}".rstrip(" ;") for v in schema]
    if len(C):
        lines.append("DOMAIN CONSTRAINTS:")
        lines += [f"  (assert (! {print_term(t)} :named {label}))" for label, t in C]
    return "\n".join(lines)


def schema_variable_list(schema: Schema) -> str:
    return ", ".join(f"{v.name} ({v.sort.value})" for v in schema)


def requirements_json(reqs: Iterable[Requirement]) -> str:
    return json.dumps([{"id": r.id, "text": r.text, "kind": r.kind.value} for r in reqs], indent=2)


def split_encoding(req: Requirement, term: Term, provenance: Provenance) -> Encoding:
    """Shape a whole predicate into an Encoding matching the requirement's declared kind."""
    if req.kind is Kind.CONDITIONAL:
        if isinstance(term, Implies):
            return Encoding(req.id, term.lhs, term.rhs, provenance)
        return Encoding(req.id, TRUE, term, provenance)
    return Encoding(req.id, None, term, provenance)


def parse_formalization(
    text: str, schema: Schema, reqs: Sequence[Requirement], provenance: Provenance = Provenance()
) -> dict[str, Encoding]:
    """Extract ``req_<id>`` predicates from a generated SMT-LIB file.

    Declarations must agree with the schema; zero-arity ``define-fun``s may
    reference earlier ones.  Other commands are ignored.
    """
    definitions: dict[str, Term] = {}
    for cmd in read_sexprs(strip_fences(text)):
        if cmd.is_atom or not cmd.value or not cmd.value[0].is_atom:
            raise FormalizationError(f"unexpected top-level form at byte {cmd.offset}")
        head = cmd.value[0].value
        args = cmd.value[1:]
        if head in ("declare-const", "declare-fun"):
            name = args[0].value if args and args[0].is_atom else None
            sort_node = args[-1] if args else None
            if name is None or sort_node is None or not sort_node.is_atom:
                raise FormalizationError(f"malformed {head} at byte {cmd.offset}")
            if head == "declare-fun" and (len(args) != 3 or args[1].is_atom or args[1].value):
                raise FormalizationError(f"{name}: only zero-arity declarations are allowed")
            if name not in schema:
                raise FormalizationError(f"{name} is not in the schema")
            if schema.sort(name).value != sort_node.value:
                raise FormalizationError(f"{name} is declared {sort_node.value}, schema says {schema.sort(name).value}")
        elif head == "define-fun":
            if len(args) != 4 or not args[0].is_atom or args[1].is_atom or args[1].value:
                raise FormalizationError(f"malformed define-fun at byte {cmd.offset}")
            name = args[0].value
            term = parse_sexpr(args[3], schema, definitions)
            check_sorts(term)
            if not args[2].is_atom or args[2].value != sort_of(term).value:
                raise FormalizationError(f"{name}: body sort does not match declared sort")
            definitions[name] = term
    missing = [r.id for r in reqs if label_for(r.id) not in definitions]
    if missing:
        raise _Coverage(missing)
    out = {}
    for r in reqs:
        term = definitions[label_for(r.id)]
        if sort_of(term) is not Sort.BOOL:
            raise FormalizationError(f"{label_for(r.id)} is not Bool-sorted")
        if r.kind is Kind.CONDITIONAL and not isinstance(term, Implies):
            raise FormalizationError(f"{label_for(r.id)} is conditional and must have the form (=> pre post)")
        out[r.id] = split_encoding(r, term, provenance)
    return out


def parse_assertions(text: str, schema: Schema, req: Requirement, provenance: Provenance = Provenance()) -> Encoding:
    """Read bare ``(assert ...)`` statements as one encoding (their conjunction)."""
    terms = []
    for cmd in read_sexprs(strip_fences(text)):
        if cmd.is_atom or not cmd.value or not cmd.value[0].is_atom:
            raise FormalizationError(f"unexpected top-level form at byte {cmd.offset}")
        head = cmd.value[0].value
        if head == "assert":
            if len(cmd.value) != 2:
                raise FormalizationError(f"malformed assert at byte {cmd.offset}")
            t = parse_sexpr(cmd.value[1], schema)
            check_sorts(t)
            if sort_of(t) is not Sort.BOOL:
                raise FormalizationError("asserted term is not Bool-sorted")
            terms.append(t)
        elif head not in ("declare-const", "declare-fun", "check-sat", "set-logic"):
            raise FormalizationError(f"unexpected command {head!r}")
    if not terms:
        raise FormalizationError("no (assert ...) statements found")
    return split_encoding(req, conj(terms), provenance)


def solver_accepts(encodings: Iterable[Encoding], C: DomainConstraints, pool: SessionPool) -> None:
    """Raise FormalizationError if the solver rejects any assertion."""
    items = [*C, *((label_for(e.req_id), e.whole()) for e in encodings)]
    try:
        pool.check(items)
    except ProtocolError as exc:
        raise FormalizationError(f"solver rejected the model: {exc}") from exc


def formalize(
    reqs: Sequence[Requirement],
    schema: Schema,
    C: DomainConstraints,
    provider: Provider,
    pool: SessionPool,
    transcript: Optional[Transcript] = None,
    max_retries: int = MAX_RETRIES,
    temperature: float = 0.0,
    key: str = "batch",
    feedback: str = "",
) -> tuple[dict[str, Encoding], Transcript]:
    """Translate *reqs* into one SMT-LIB model, regenerating on syntactic failure.

    At most ``max_retries`` regenerations follow the first attempt; each
    carries the previous error and output.  *feedback*, when given, is appended
    to the first prompt (used by round-trip repair).
    """
    transcript = transcript if transcript is not None else Transcript()
    variables = {"requirements_json": requirements_json(reqs), "schema_block": schema_block(schema, C)}
    suffix = feedback
    last_error = ""
    for retry in range(max_retries + 1):
        c, rec = transcript.call(
            provider, CompletionRequest("formalize", variables, temperature, key=key, suffix=suffix)
        )
        try:
            if c.truncated:
                raise FormalizationError("output was truncated at the token budget")
            prov = Provenance.generated(c.attempt, provider.tag)
            encodings = parse_formalization(c.text, schema, reqs, prov)
            solver_accepts(encodings.values(), C, pool)
        except (FormalizationError, FormulaError) as exc:
            last_error = str(exc)
            rec.outcome = "coverage_gap" if isinstance(exc, _Coverage) else "rejected"
            suffix = provider.templates.render_suffix(
                "formalize_repair", {"error": last_error, "previous_output": c.text.strip()}
            )
            if retry == max_retries and isinstance(exc, _Coverage):
                raise CoverageGap(exc.missing, transcript) from exc
            continue
        rec.outcome = "ok"
        return encodings, transcript
    raise RetryBudgetExhausted(last_error, transcript)
