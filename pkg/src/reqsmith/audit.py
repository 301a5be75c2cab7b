"""Consistency, vacuousness, violatability and redundancy audits."""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

from .formula import Not, Term
from .model import AssembledModel, Encoding, Kind, label_for, lower
from .solver import CheckResult, SessionPool

PROBE_GUARD = "probe_guard"
PROBE_VIOLATION = "probe_violation"


class Status(enum.Enum):
    YES = "yes"
    NO = "no"
    NOT_APPLICABLE = "not_applicable"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class ConsistencyOutcome:
    status: Status
    witness: Optional[dict] = None
    core: Optional[frozenset[str]] = None
    reason: Optional[str] = None


@dataclass(frozen=True)
class AuditOutcome:
    req_id: str
    kind: Kind
    vacuous: Status
    vacuous_witness: Optional[dict]
    violatable: Status
    violation_witness: Optional[dict]
    redundant: Status
    redundancy_core: Optional[frozenset[str]]
    redundancy_witness: Optional[dict]


def violation_probe(enc: Encoding) -> list[tuple[str, Term]]:
    """Assertions that hold exactly when *enc* is broken."""
    if enc.guard is None:
        return [(PROBE_VIOLATION, Not(enc.body))]
    return [(PROBE_GUARD, enc.guard), (PROBE_VIOLATION, Not(enc.body))]


def _sat_status(r: CheckResult, sat_means: Status, unsat_means: Status) -> Status:
    if r.sat:
        return sat_means
    if r.unsat:
        return unsat_means
    return Status.INCONCLUSIVE


def audit_consistency(m: AssembledModel, pool: SessionPool) -> ConsistencyOutcome:
    r = pool.check(lower(m))
    if r.sat:
        return ConsistencyOutcome(Status.YES, witness=r.model)
    if r.unsat:
        return ConsistencyOutcome(Status.NO, core=r.unsat_core)
    return ConsistencyOutcome(Status.INCONCLUSIVE, reason=r.reason)


def audit_vacuousness(m: AssembledModel, req_id: str, pool: SessionPool) -> tuple[Status, Optional[dict]]:
    """Can the guard of *req_id* hold under C alone?  Returns ``(vacuous, guard_witness)``."""
    enc = m.encodings[req_id]
    if enc.guard is None:
        return Status.NOT_APPLICABLE, None
    r = pool.check([*m.constraints, (PROBE_GUARD, enc.guard)])
    return _sat_status(r, Status.NO, Status.YES), r.model


def audit_violatability(m: AssembledModel, req_id: str, pool: SessionPool) -> tuple[Status, Optional[dict]]:
    """Can *req_id* be broken under C?  Returns ``(violatable, violating_assignment)``."""
    r = pool.check([*m.constraints, *violation_probe(m.encodings[req_id])])
    return _sat_status(r, Status.YES, Status.NO), r.model


def audit_redundancy(
    m: AssembledModel, req_id: str, pool: SessionPool
) -> tuple[Status, Optional[frozenset[str]], Optional[dict]]:
    """Check whether the other requirements and C already enforce *req_id*.

    Returns ``(status, core, witness)``; the core has the probe labels
    stripped so it names only subsuming requirements and constraints.
    """
    own = label_for(req_id)
    rest = [(label, t) for label, t in lower(m) if label != own]
    r = pool.check([*rest, *violation_probe(m.encodings[req_id])])
    if r.unsat:
        core = r.unsat_core
        if core is not None:
            core = frozenset(l for l in core if l not in (PROBE_GUARD, PROBE_VIOLATION))
        return Status.YES, core, None
    if r.sat:
        return Status.NO, None, r.model
    return Status.INCONCLUSIVE, None, None


def audit_requirement(m: AssembledModel, req_id: str, pool: SessionPool) -> AuditOutcome:
    vac, vac_w = audit_vacuousness(m, req_id, pool)
    vio, vio_w = audit_violatability(m, req_id, pool)
    red, core, red_w = audit_redundancy(m, req_id, pool)
    return AuditOutcome(
        req_id=req_id,
        kind=m.requirement(req_id).kind,
        vacuous=vac,
        vacuous_witness=vac_w if vac is Status.NO else None,
        violatable=vio,
        violation_witness=vio_w if vio is Status.YES else None,
        redundant=red,
        redundancy_core=core,
        redundancy_witness=red_w,
    )


def audit_all(m: AssembledModel, pool: SessionPool) -> tuple[ConsistencyOutcome, list[AuditOutcome]]:
    consistency = audit_consistency(m, pool)
    with ThreadPoolExecutor(max_workers=pool.size) as ex:
        outcomes = list(ex.map(lambda rid: audit_requirement(m, rid, pool), m.ids))
    return consistency, sorted(outcomes, key=lambda o: o.req_id)
