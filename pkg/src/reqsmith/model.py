"""Requirements, their encodings, domain constraints, and the assembled model."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .formula import (
    FormulaError,
    Implies,
    Schema,
    SchemaVar,
    Sort,
    SortError,
    Term,
    check_sorts,
    is_simple_symbol,
    parse_term,
    print_term,
    sort_of,
)


class ModelError(Exception):
    pass


class MissingEncoding(ModelError):
    pass


class ExtraEncoding(ModelError):
    pass


class GuardKindMismatch(ModelError):
    pass


class Kind(enum.Enum):
    CONDITIONAL = "conditional"
    INVARIANT = "invariant"


@dataclass(frozen=True)
class Requirement:
    id: str
    text: str
    kind: Kind

    def __post_init__(self):
        if not is_simple_symbol(self.id):
            raise ModelError(f"requirement id {self.id!r} is not a valid symbol")
        if not self.text.strip():
            raise ModelError(f"requirement {self.id} has empty text")


@dataclass(frozen=True)
class Provenance:
    source: str = "manual"
    sample_index: Optional[int] = None
    provider_tag: Optional[str] = None

    @classmethod
    def generated(cls, sample_index: int, provider_tag: str) -> "Provenance":
        return cls("generated", sample_index, provider_tag)


MANUAL = Provenance()


@dataclass(frozen=True)
class Encoding:
    """guard => body for conditional requirements, body alone for invariants."""

    req_id: str
    guard: Optional[Term]
    body: Term
    provenance: Provenance = field(default=MANUAL, compare=False)

    def whole(self) -> Term:
        return self.body if self.guard is None else Implies(self.guard, self.body)

    @property
    def conditional(self) -> bool:
        return self.guard is not None

    def text(self) -> str:
        return print_term(self.whole())


def label_for(req_id: str) -> str:
    return f"req_{req_id}"


@dataclass(frozen=True)
class DomainConstraints:
    items: tuple[tuple[str, Term], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "items", tuple((l, t) for l, t in self.items))
        seen = set()
        for label, t in self.items:
            if not label.startswith("dom_") or not is_simple_symbol(label):
                raise ModelError(f"domain constraint label {label!r} must start with 'dom_'")
            if label in seen:
                raise ModelError(f"duplicate domain constraint label {label!r}")
            if sort_of(t) is not Sort.BOOL:
                raise SortError(f"domain constraint {label} is not Bool-sorted")
            seen.add(label)

    def __iter__(self):
        return iter(self.items)

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class AssembledModel:
    schema: Schema
    constraints: DomainConstraints
    requirements: tuple[Requirement, ...]
    encodings: Mapping[str, Encoding]

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.requirements]

    def requirement(self, req_id: str) -> Requirement:
        for r in self.requirements:
            if r.id == req_id:
                return r
        raise KeyError(req_id)

    def replace(self, encoding: Encoding) -> "AssembledModel":
        """Copy of the model with one requirement's encoding swapped."""
        if encoding.req_id not in self.encodings:
            raise ExtraEncoding(encoding.req_id)
        req = self.requirement(encoding.req_id)
        _check_kind(req, encoding)
        encodings = dict(self.encodings)
        encodings[encoding.req_id] = encoding
        return AssembledModel(self.schema, self.constraints, self.requirements, encodings)


def _check_kind(req: Requirement, enc: Encoding) -> None:
    if (req.kind is Kind.CONDITIONAL) != enc.conditional:
        raise GuardKindMismatch(
            f"{req.id} is {req.kind.value} but its encoding "
            f"{'has' if enc.conditional else 'lacks'} a guard"
        )


def assemble(
    schema: Schema,
    constraints: DomainConstraints,
    reqs: Iterable[Requirement],
    encodings: Iterable[Encoding],
) -> AssembledModel:
    reqs = sorted(reqs, key=lambda r: r.id)
    by_id = {}
    for r in reqs:
        if r.id in by_id:
            raise ModelError(f"duplicate requirement id {r.id!r}")
        by_id[r.id] = r
    encs: dict[str, Encoding] = {}
    for e in encodings:
        if e.req_id not in by_id:
            raise ExtraEncoding(e.req_id)
        if e.req_id in encs:
            raise ExtraEncoding(f"second encoding for {e.req_id}")
        encs[e.req_id] = e
    for r in reqs:
        if r.id not in encs:
            raise MissingEncoding(r.id)
        _check_kind(r, encs[r.id])
    for _, t in constraints:
        schema.check_closed(t)
    for e in encs.values():
        for t in (e.guard, e.body):
            if t is not None:
                schema.check_closed(t)
                check_sorts(t)
                if sort_of(t) is not Sort.BOOL:
                    raise SortError(f"encoding of {e.req_id} is not Bool-sorted")
    ordered = {r.id: encs[r.id] for r in reqs}
    return AssembledModel(schema, constraints, tuple(reqs), ordered)


def lower(m: AssembledModel) -> list[tuple[str, Term]]:
    """Labeled assertions realizing C and every whole requirement, in stable order."""
    out = list(m.constraints)
    out.extend((label_for(rid), m.encodings[rid].whole()) for rid in m.ids)
    return out


# ---------------------------------------------------------------------------
# Input files


def load_json(path) -> object:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def schema_from_json(data: Sequence[Mapping]) -> Schema:
    out = []
    for item in data:
        try:
            sort = Sort(item["sort"])
        except ValueError:
            raise ModelError(f"unknown sort {item['sort']!r} for {item['name']}") from None
        out.append(SchemaVar(item["name"], sort, item.get("description", "")))
    return Schema(out)


def schema_to_json(schema: Schema) -> list[dict]:
    return [{"name": v.name, "sort": v.sort.value, "description": v.description} for v in schema]


def requirements_from_json(data: Sequence[Mapping]) -> list[Requirement]:
    return [Requirement(d["id"], d["text"], Kind(d["kind"])) for d in data]


def requirements_to_json(reqs: Iterable[Requirement]) -> list[dict]:
    return [{"id": r.id, "text": r.text, "kind": r.kind.value} for r in reqs]


def constraints_from_json(data: Sequence[Mapping], schema: Schema) -> DomainConstraints:
    return DomainConstraints(tuple((d["label"], parse_term(d["smt"], schema)) for d in data))


def encoding_from_json(d: Mapping, schema: Schema, req_id: Optional[str] = None) -> Encoding:
    guard = d.get("guard")
    return Encoding(
        req_id or d["req_id"],
        parse_term(guard, schema) if guard is not None else None,
        parse_term(d["body"], schema),
    )


def encodings_from_json(data: Sequence[Mapping], schema: Schema) -> list[Encoding]:
    out = []
    for d in data:
        try:
            out.append(encoding_from_json(d, schema))
        except FormulaError as exc:
            raise ModelError(f"encoding of {d.get('req_id')}: {exc}") from exc
    return out


def encoding_to_json(e: Encoding) -> dict:
    return {
        "req_id": e.req_id,
        "guard": print_term(e.guard) if e.guard is not None else None,
        "body": print_term(e.body),
    }


def load_schema(path) -> Schema:
    return schema_from_json(load_json(path))


def load_model(schema_path, constraints_path, requirements_path, encodings_path) -> AssembledModel:
    schema = load_schema(schema_path)
    return assemble(
        schema,
        constraints_from_json(load_json(constraints_path), schema),
        requirements_from_json(load_json(requirements_path)),
        encodings_from_json(load_json(encodings_path), schema),
    )
