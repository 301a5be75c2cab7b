"""Bidirectional agreement between encodings, sample clustering, and mutant detection."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .audit import audit_consistency, Status
from .formula import Not, print_term
from .model import AssembledModel, DomainConstraints, Encoding
from .solver import SessionPool

LEFT = "cmp_left"
RIGHT = "cmp_right_negated"


@dataclass(frozen=True)
class AgreementVerdict:
    agree: bool
    a_not_b: Optional[dict] = None
    b_not_a: Optional[dict] = None
    inconclusive: bool = False

    @property
    def status(self) -> str:
        return "agree" if self.agree else "disagree"

    @property
    def witness(self) -> Optional[dict]:
        return self.a_not_b if self.a_not_b is not None else self.b_not_a


def check_agreement(C: DomainConstraints, a: Encoding, b: Encoding, pool: SessionPool) -> AgreementVerdict:
    """Two encodings agree when neither admits, under C, a state the other rules out.

    An UNKNOWN in either direction never yields agreement: the pair comes back
    as a disagreement flagged ``inconclusive``.
    """
    wa, wb = a.whole(), b.whole()
    ab = pool.check([*C, (LEFT, wa), (RIGHT, Not(wb))])
    ba = pool.check([*C, (LEFT, wb), (RIGHT, Not(wa))])
    inconclusive = ab.unknown or ba.unknown
    return AgreementVerdict(
        agree=ab.unsat and ba.unsat,
        a_not_b=ab.model if ab.sat else None,
        b_not_a=ba.model if ba.sat else None,
        inconclusive=inconclusive,
    )


@dataclass(frozen=True)
class ClassWitness:
    class_i: int
    class_j: int
    direction: str  # "i_not_j" or "j_not_i"
    witness: Optional[dict]


@dataclass
class EncodingClusters:
    req_id: str
    samples: list[Encoding]
    classes: list[list[int]]
    witnesses: list[ClassWitness] = field(default_factory=list)
    inconclusive: bool = False
    full_pairwise: bool = False

    @property
    def representatives(self) -> list[Encoding]:
        return [self.samples[c[0]] for c in self.classes]

    @property
    def ambiguity_sensitive(self) -> bool:
        return len(self.classes) > 1 or self.inconclusive

    @property
    def pairwise_agreement(self) -> tuple[int, int]:
        """(agreeing pairs, total pairs) implied by the partition."""
        n = len(self.samples)
        agreeing = sum(len(c) * (len(c) - 1) // 2 for c in self.classes)
        return agreeing, n * (n - 1) // 2

    @property
    def entropy(self) -> float:
        """Shannon entropy (nats) of the class-size distribution."""
        n = len(self.samples)
        return -sum(len(c) / n * math.log(len(c) / n) for c in self.classes) + 0.0


def cluster_samples(
    C: DomainConstraints, samples: Sequence[Encoding], pool: SessionPool, req_id: Optional[str] = None
) -> EncodingClusters:
    """Partition samples into semantic equivalence classes.

    Greedy: each sample joins the first class whose representative it agrees
    with.  A post-pass compares every member against the other classes'
    representatives; if some member agrees with a foreign representative the
    relation was not transitive on this set and clustering falls back to
    connected components of the full pairwise agreement graph.
    """
    if not samples:
        raise ValueError("cluster_samples needs at least one sample")
    samples = list(samples)
    rid = req_id or samples[0].req_id
    cache: dict[tuple[int, int], AgreementVerdict] = {}

    def verdict(i: int, j: int) -> AgreementVerdict:
        if (i, j) not in cache:
            cache[(i, j)] = check_agreement(C, samples[i], samples[j], pool)
        return cache[(i, j)]

    canon = [print_term(s.whole()) for s in samples]
    classes: list[list[int]] = []
    inconclusive = False
    for i in range(len(samples)):
        for cls in classes:
            rep = cls[0]
            if canon[rep] == canon[i]:
                cls.append(i)
                break
            v = verdict(rep, i)
            inconclusive |= v.inconclusive
            if v.agree:
                cls.append(i)
                break
        else:
            classes.append([i])

    full = False
    for ci, cls in enumerate(classes):
        for member in cls[1:]:
            for cj, other in enumerate(classes):
                if cj == ci or other[0] == member:
                    continue
                v = verdict(other[0], member)
                inconclusive |= v.inconclusive
                if v.agree:
                    full = True
    if full:
        classes = _components(samples, verdict)
        inconclusive |= any(v.inconclusive for v in cache.values())

    witnesses = []
    for i in range(len(classes)):
        for j in range(i + 1, len(classes)):
            v = verdict(classes[i][0], classes[j][0])
            inconclusive |= v.inconclusive
            if v.a_not_b is not None:
                witnesses.append(ClassWitness(i, j, "i_not_j", v.a_not_b))
            if v.b_not_a is not None:
                witnesses.append(ClassWitness(i, j, "j_not_i", v.b_not_a))
            if v.a_not_b is None and v.b_not_a is None:
                witnesses.append(ClassWitness(i, j, "unknown", None))
    return EncodingClusters(rid, samples, classes, witnesses, inconclusive, full)


def _components(samples, verdict) -> list[list[int]]:
    n = len(samples)
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in range(n):
        for j in range(i + 1, n):
            if verdict(i, j).agree:
                parent[find(j)] = find(i)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


class Detection(enum.Enum):
    GLOBAL_INCONSISTENCY = "global_inconsistency"
    DISTINGUISHABLE = "distinguishable"
    UNDETECTED = "undetected"
    INCONCLUSIVE = "inconclusive"


MUTANT_PERMITS = "mutant_permits"
ORIGINAL_PERMITS = "original_permits"

CATEGORIES = ("false_alarm", "mode_transition", "value_mismatch", "limit_violation")


@dataclass(frozen=True)
class MutationVerdict:
    req_id: str
    category: str
    via: Detection
    direction: Optional[str] = None
    witness: Optional[dict] = None
    model_consistent: Optional[bool] = None
    core: Optional[frozenset[str]] = None

    @property
    def detected(self) -> bool:
        return self.via in (Detection.GLOBAL_INCONSISTENCY, Detection.DISTINGUISHABLE)


def detect_mutation(
    C: DomainConstraints,
    original: Encoding,
    mutant: Encoding,
    rest: AssembledModel,
    pool: SessionPool,
    category: str = "",
) -> MutationVerdict:
    """Caught if the mutated model is inconsistent, or the two encodings can be told apart under C."""
    if mutant.req_id != original.req_id:
        raise ValueError(f"mutant targets {mutant.req_id}, original is {original.req_id}")
    mutated = rest.replace(mutant)
    consistency = audit_consistency(mutated, pool)
    if consistency.status is Status.NO:
        return MutationVerdict(
            original.req_id, category, Detection.GLOBAL_INCONSISTENCY,
            model_consistent=False, core=consistency.core,
        )
    consistent = True if consistency.status is Status.YES else None
    v = check_agreement(C, mutant, original, pool)
    if v.a_not_b is not None:
        return MutationVerdict(original.req_id, category, Detection.DISTINGUISHABLE,
                               MUTANT_PERMITS, v.a_not_b, consistent)
    if v.b_not_a is not None:
        return MutationVerdict(original.req_id, category, Detection.DISTINGUISHABLE,
                               ORIGINAL_PERMITS, v.b_not_a, consistent)
    if v.inconclusive or consistent is None:
        return MutationVerdict(original.req_id, category, Detection.INCONCLUSIVE, model_consistent=consistent)
    return MutationVerdict(original.req_id, category, Detection.UNDETECTED, model_consistent=consistent)
