"""Informalize each encoding, re-formalize the text, and check the two agree."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Callable, Optional

from ..equivalence import AgreementVerdict, check_agreement
from ..formula import free_vars
from ..model import AssembledModel, Encoding, Kind, ModelError, Requirement
from ..solver import SessionPool
from .ambiguity import format_assignment
from .formalize import MAX_RETRIES, FormalizationError, formalize, schema_block, strip_fences
from .providers import CompletionRequest, Provider, ProviderError, Transcript

_WORD = re.compile(r"\w+")


def jaccard_similarity(a: str, b: str) -> float:
    """Overlap of lowercased word sets; two empty texts count as identical."""
    wa, wb = set(_WORD.findall(a.lower())), set(_WORD.findall(b.lower()))
    if not wa and not wb:
        return 1.0
    return len(wa & wb) / len(wa | wb)


SIMILARITY_METRIC = "jaccard_word_overlap"


@dataclass
class RoundTripResult:
    req_id: str
    original_text: str
    reconstructed_text: Optional[str] = None
    agreement: Optional[AgreementVerdict] = None
    similarity: Optional[float] = None
    repair_rounds: int = 0
    encoding: Optional[Encoding] = None
    error: Optional[str] = None

    @property
    def agrees(self) -> bool:
        return self.agreement is not None and self.agreement.agree


class InformalizeError(Exception):
    pass


def parse_informal(text: str, req: Requirement) -> Requirement:
    try:
        data = json.loads(strip_fences(text).strip())
    except json.JSONDecodeError as exc:
        raise InformalizeError(f"not a JSON object: {exc}") from exc
    if not isinstance(data, dict) or not isinstance(data.get("text"), str):
        raise InformalizeError("response lacks a string 'text' field")
    if data.get("id", req.id) != req.id:
        raise InformalizeError(f"response names {data.get('id')!r}, expected {req.id!r}")
    try:
        kind = Kind(data.get("kind", req.kind.value))
        return Requirement(req.id, data["text"], kind)
    except (ValueError, ModelError) as exc:
        raise InformalizeError(str(exc)) from exc


def describe_disagreement(v: AgreementVerdict, original: Encoding, candidate: Encoding) -> str:
    names = free_vars(original.whole()) | free_vars(candidate.whole())
    lines = []
    if v.b_not_a is not None:
        lines.append(f"- {format_assignment(v.b_not_a, names)}: allowed by your encoding, ruled out by the requirement")
    if v.a_not_b is not None:
        lines.append(f"- {format_assignment(v.a_not_b, names)}: required to be allowed, ruled out by your encoding")
    if v.inconclusive:
        lines.append("- the solver could not decide one direction")
    return "\n".join(lines)


def _round_trip_one(
    m: AssembledModel,
    req: Requirement,
    provider: Provider,
    pool: SessionPool,
    similarity: Callable[[str, str], float],
    transcript: Transcript,
    max_repairs: int,
    max_retries: int,
) -> RoundTripResult:
    original = m.encodings[req.id]
    out = RoundTripResult(req.id, req.text)
    variables = {
        "schema_block": schema_block(m.schema, m.constraints),
        "req_id": req.id,
        "kind": req.kind.value,
        "smt": original.text(),
    }
    c, rec = transcript.call(provider, CompletionRequest("informalize", variables, key=req.id))
    try:
        rebuilt = parse_informal(c.text, req)
    except InformalizeError as exc:
        rec.outcome = "rejected"
        out.error = f"informalization failed: {exc}"
        return out
    rec.outcome = "ok"
    out.reconstructed_text = rebuilt.text
    out.similarity = similarity(req.text, rebuilt.text)

    feedback = ""
    while True:
        try:
            encs, _ = formalize(
                [rebuilt], m.schema, m.constraints, provider, pool, transcript,
                max_retries=max_retries, key=req.id, feedback=feedback,
            )
        except FormalizationError as exc:
            out.error = f"re-formalization failed: {exc}"
            return out
        candidate = encs[req.id]
        out.encoding = candidate
        out.agreement = check_agreement(m.constraints, original, candidate, pool)
        if out.agreement.agree or out.repair_rounds >= max_repairs:
            return out
        out.repair_rounds += 1
        feedback = provider.templates.render_suffix(
            "roundtrip_repair",
            {
                "witnesses": describe_disagreement(out.agreement, original, candidate),
                "previous_encoding": candidate.text(),
            },
        )


def round_trip(
    m: AssembledModel,
    provider: Provider,
    pool: SessionPool,
    similarity: Callable[[str, str], float] = jaccard_similarity,
    transcript: Optional[Transcript] = None,
    max_repairs: int = MAX_RETRIES,
    max_retries: int = MAX_RETRIES,
) -> tuple[list[RoundTripResult], Transcript]:
    """Round-trip every requirement in id order; a failure on one is recorded and the batch continues.

    *similarity* compares the original and reconstructed texts.  Disagreement
    triggers up to *max_repairs* re-formalizations carrying the solver's
    distinguishing states.
    """
    transcript = transcript if transcript is not None else Transcript()
    results = []
    for req in m.requirements:
        try:
            results.append(_round_trip_one(m, req, provider, pool, similarity, transcript, max_repairs, max_retries))
        except ProviderError as exc:
            results.append(RoundTripResult(req.id, req.text, error=str(exc)))
    return results, transcript
