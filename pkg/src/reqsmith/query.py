"""Scenario entailment checks, violation localization, and counterexample-guided answer repair."""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional, Sequence

from .formula import FormulaError, Not, Schema, Sort, Value, conj, evaluate, format_value, literal, parse_value
from .model import AssembledModel, load_json, lower
from .pipeline.formalize import strip_fences
from .pipeline.providers import CompletionRequest, Provider, Transcript
from .solver import SessionPool

NEG_ANSWER = "neg_answer"
MAX_ITERS = 5


def scenario_label(name: str) -> str:
    return f"scn_{name}"


@dataclass(frozen=True)
class Scenario:
    question_id: str
    description: str
    state: Mapping[str, Value]


@dataclass(frozen=True)
class CandidateAnswer:
    question_id: str
    actions: Mapping[str, bool]


class Label(enum.Enum):
    SAFE = "SAFE"
    VIOLATION = "VIOLATION"
    UNKNOWN = "UNKNOWN"


@dataclass(frozen=True)
class QueryVerdict:
    label: Label
    counterexample: Optional[dict] = None
    violated_reqs: Optional[list[str]] = None
    degenerate: bool = False
    reason: Optional[str] = None


class FeedbackMode(enum.Enum):
    BASELINE = "baseline"
    SELF_REPAIR = "self_repair"
    REQUIREMENTS_ONLY = "requirements_only"
    FULL_CEGR = "full_cegr"


@dataclass(frozen=True)
class Question:
    question_id: str
    type: str
    scenario: Scenario
    relevant_vars: tuple[str, ...]
    relevant_req_ids: tuple[str, ...]
    response_schema: Mapping[str, str]
    question: str = "Which machine actions must be taken?"


QUESTION_TYPES = ("single", "multi", "none")


def _state_value(name: str, raw, schema: Schema) -> Value:
    sort = schema.sort(name)
    if sort is Sort.BOOL:
        if not isinstance(raw, bool):
            raise FormulaError(f"{name} expects true/false, got {raw!r}")
        return raw
    if isinstance(raw, bool):
        raise FormulaError(f"{name} expects a number, got {raw!r}")
    if isinstance(raw, int):
        return Fraction(raw)
    if isinstance(raw, (float, str)):
        # decimal literals are read exactly, never through binary floating point
        text = str(raw)
        try:
            return Fraction(text)
        except ValueError:
            value = parse_value(text)
            if isinstance(value, bool):
                raise FormulaError(f"{name} expects a number, got {raw!r}") from None
            return value
    raise FormulaError(f"{name}: unsupported value {raw!r}")


def question_from_json(d: Mapping, schema: Schema) -> Question:
    qid = d["question_id"]
    qtype = d.get("type", "single")
    if qtype not in QUESTION_TYPES:
        raise ValueError(f"{qid}: question type must be one of {QUESTION_TYPES}")
    sc = d["scenario"]
    state = {name: _state_value(name, raw, schema) for name, raw in sc.get("state", {}).items()}
    relevant = tuple(d["relevant_vars"])
    for name in relevant:
        if schema.sort(name) is not Sort.BOOL:
            raise FormulaError(f"{qid}: action variable {name} must be Bool")
    schema_map = d.get("response_schema") or {name: "Bool" for name in relevant}
    kw = {"question": d["question"]} if "question" in d else {}
    return Question(
        qid, qtype, Scenario(qid, sc.get("description", ""), state), relevant,
        tuple(d.get("relevant_req_ids", ())), dict(schema_map), **kw,
    )


def load_questions(path, schema: Schema) -> list[Question]:
    return [question_from_json(d, schema) for d in load_json(path)]


def localize_violations(m: AssembledModel, w: Mapping[str, Value]) -> list[str]:
    """Ids of requirements false under *w* (completed with sort defaults), sorted."""
    full = m.schema.complete(w)
    return sorted(rid for rid in m.ids if not evaluate(m.encodings[rid].whole(), full))


def verify_answer(m: AssembledModel, scenario: Scenario, answer: CandidateAnswer, pool: SessionPool) -> QueryVerdict:
    """Decide M ∧ s ∧ ¬a.  UNSAT means the answer is entailed (SAFE).

    On SAT the solver model is the counterexample: a state allowed by the
    requirements and the scenario in which the answer does not hold.  The
    violated requirements are those the answer's own action values break when
    imposed on that state.
    """
    m.schema.check_assignment(scenario.state)
    m.schema.check_assignment(answer.actions)
    scen = [(scenario_label(n), literal(m.schema.var(n), v)) for n, v in scenario.state.items()]
    claim = conj([literal(m.schema.var(n), v) for n, v in answer.actions.items()])
    degenerate = not answer.actions
    r = pool.check([*lower(m), *scen, (NEG_ANSWER, Not(claim))])
    if r.unsat:
        return QueryVerdict(Label.SAFE, degenerate=degenerate)
    if r.sat:
        proposed = {**r.model, **answer.actions}
        return QueryVerdict(Label.VIOLATION, r.model, localize_violations(m, proposed), degenerate)
    return QueryVerdict(Label.UNKNOWN, degenerate=degenerate, reason=r.reason)


class TranslationError(Exception):
    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


def _json_object(text: str) -> Optional[dict]:
    body = strip_fences(text).strip()
    candidates = [body]
    start, end = body.find("{"), body.rfind("}")
    if 0 <= start < end:
        candidates.append(body[start : end + 1])
    for c in candidates:
        try:
            data = json.loads(c)
        except json.JSONDecodeError:
            continue
        if isinstance(data, dict):
            return data
    return None


def translate_answer(text: str, relevant_vars: Sequence[str], question_id: str = "") -> CandidateAnswer:
    """Read a candidate answer: the JSON response object first, then ``name: true|false`` patterns.

    Every relevant variable must receive an explicit Boolean; keys outside
    the relevant set are ignored.
    """
    data = _json_object(text)
    if data is not None:
        missing = [v for v in relevant_vars if not isinstance(data.get(v), bool)]
        if not missing:
            return CandidateAnswer(question_id, {v: data[v] for v in relevant_vars})
    found = {}
    for v in relevant_vars:
        hits = re.findall(rf"(?<![\w]){re.escape(v)}\W{{0,3}}\s*[:=]\s*\W?(true|false)\b", text, re.IGNORECASE)
        if len({h.lower() for h in hits}) == 1:
            found[v] = hits[0].lower() == "true"
    if len(found) == len(relevant_vars) and text.strip():
        return CandidateAnswer(question_id, found)
    missing = [v for v in relevant_vars if v not in found]
    raise TranslationError(f"no explicit true/false for: {', '.join(missing) or '(empty answer)'}", text)


@dataclass
class Attempt:
    raw: str
    answer: Optional[CandidateAnswer]
    verdict: Optional[QueryVerdict]
    feedback: str = ""
    error: Optional[str] = None


@dataclass
class CegrRun:
    question_id: str
    mode: FeedbackMode
    final: QueryVerdict
    attempts: list[Attempt] = field(default_factory=list)

    @property
    def iterations_used(self) -> int:
        return len(self.attempts) - 1


def prompt_variables(m: AssembledModel, q: Question) -> dict[str, str]:
    names = list(dict.fromkeys([*q.scenario.state, *q.relevant_vars]))
    defs = "Variables:\n" + "\n".join(
        f"- {n} ({m.schema.sort(n).value}): {next(v.description for v in m.schema if v.name == n)}".rstrip(": ")
        for n in names
    )
    reqs = "Relevant requirements:\n" + (
        "\n".join(f"- {rid}: {m.requirement(rid).text}" for rid in q.relevant_req_ids) or "- none"
    )
    return {
        "variable_definitions": defs,
        "relevant_requirements": reqs,
        "scenario_description": q.scenario.description,
        "question": q.question,
        "response_schema": json.dumps(dict(q.response_schema)),
    }


def feedback_for(
    mode: FeedbackMode, m: AssembledModel, q: Question, answer: CandidateAnswer, verdict: QueryVerdict, provider: Provider
) -> str:
    templates = provider.templates
    if mode is FeedbackMode.BASELINE:
        return ""
    if mode is FeedbackMode.SELF_REPAIR:
        return templates.render_suffix("cegr_self", {})
    violated = verdict.violated_reqs or []
    ids = ", ".join(violated) or "none localized"
    if mode is FeedbackMode.REQUIREMENTS_ONLY:
        texts = "\n".join(f"- {rid}: {m.requirement(rid).text}" for rid in violated)
        return templates.render_suffix("cegr_requirements", {"req_ids": ids, "requirement_texts": texts})
    cex = verdict.counterexample or {}
    shown = list(dict.fromkeys([*q.scenario.state, *q.relevant_vars]))
    assignments = "\n".join(f"  {n} = {format_value(cex[n])}" for n in shown if n in cex)
    conflicts = "\n".join(
        f"- {n}: you answered {format_value(a)}, the counterexample has {format_value(cex[n])}"
        for n, a in answer.actions.items()
        if n in cex and cex[n] != a
    ) or "- none"
    return templates.render_suffix(
        "cegr_full", {"req_ids": ids, "counterexample_assignments": assignments, "conflict_lines": conflicts}
    )


def cegr_run(
    m: AssembledModel,
    q: Question,
    mode: FeedbackMode,
    provider: Provider,
    pool: SessionPool,
    max_iters: int = MAX_ITERS,
    transcript: Optional[Transcript] = None,
    temperature: float = 0.0,
) -> CegrRun:
    """One initial answer plus up to *max_iters* repairs driven by verifier feedback.

    Stops on SAFE or UNKNOWN.  An unreadable answer counts as a failed attempt;
    outside baseline mode the next prompt carries the parse error.
    """
    if max_iters < 0:
        raise ValueError("max_iters must be >= 0")
    transcript = transcript if transcript is not None else Transcript()
    variables = prompt_variables(m, q)
    key = f"{q.question_id}/{mode.value}"
    run = CegrRun(q.question_id, mode, QueryVerdict(Label.UNKNOWN, reason="no readable answer"))
    suffix = ""
    for i in range(max_iters + 1):
        c, rec = transcript.call(provider, CompletionRequest("cegr_answer", variables, temperature, key=key, suffix=suffix))
        try:
            answer = translate_answer(c.text, q.relevant_vars, q.question_id)
        except TranslationError as exc:
            rec.outcome = "unreadable"
            feedback = "" if mode is FeedbackMode.BASELINE else provider.templates.render_suffix(
                "cegr_parse", {"error": str(exc)}
            )
            run.attempts.append(Attempt(c.text, None, None, feedback if i < max_iters else "", str(exc)))
            suffix = feedback
            continue
        verdict = verify_answer(m, q.scenario, answer, pool)
        run.final = verdict
        rec.outcome = verdict.label.value
        done = verdict.label is not Label.VIOLATION or i == max_iters
        feedback = "" if done else feedback_for(mode, m, q, answer, verdict, provider)
        run.attempts.append(Attempt(c.text, answer, verdict, feedback))
        if done:
            break
        suffix = feedback
    return run


__all__ = [
    "Attempt", "CandidateAnswer", "CegrRun", "FeedbackMode", "Label", "NEG_ANSWER", "Question",
    "QueryVerdict", "Scenario", "TranslationError", "cegr_run", "load_questions",
    "localize_violations", "question_from_json", "translate_answer", "verify_answer",
]
