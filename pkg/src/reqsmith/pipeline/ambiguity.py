"""Ambiguity screening by repeated sampling, and witness-driven clarification."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from ..equivalence import EncodingClusters, cluster_samples
from ..formula import FormulaError, Schema, format_value, free_vars, print_term
from ..model import DomainConstraints, Encoding, Provenance, Requirement
from ..solver import SessionPool
from .formalize import MAX_RETRIES, FormalizationError, parse_assertions, schema_variable_list
from .providers import CompletionRequest, Provider, Transcript

SCREEN_TEMPERATURE = 1.0
CLARIFY_TEMPERATURE = 0.2
DEFAULT_SAMPLES = 5
MAX_ROUNDS = 5


class ScreeningError(Exception):
    pass


@dataclass
class Screening:
    clusters: EncodingClusters
    dropped: list[str] = field(default_factory=list)

    @property
    def flagged(self) -> bool:
        return self.clusters.ambiguity_sensitive


def _sample(req, schema, provider, transcript, temperature, max_retries) -> Encoding:
    variables = {"schema_variable_list": schema_variable_list(schema), "requirement_text": req.text}
    suffix = ""
    error = ""
    for _ in range(max_retries + 1):
        c, rec = transcript.call(
            provider, CompletionRequest("screen", variables, temperature, key=req.id, suffix=suffix)
        )
        try:
            if c.truncated:
                raise FormalizationError("output was truncated at the token budget")
            enc = parse_assertions(c.text, schema, req, Provenance.generated(c.attempt, provider.tag))
        except (FormalizationError, FormulaError) as exc:
            error = str(exc)
            rec.outcome = "rejected"
            suffix = provider.templates.render_suffix("screen_repair", {"error": error})
            continue
        rec.outcome = "ok"
        return enc
    raise FormalizationError(f"sample failed after {max_retries} retries: {error}")


def screen_ambiguity(
    req: Requirement,
    schema: Schema,
    C: DomainConstraints,
    provider: Provider,
    pool: SessionPool,
    N: int = DEFAULT_SAMPLES,
    transcript: Optional[Transcript] = None,
    temperature: float = SCREEN_TEMPERATURE,
    max_retries: int = MAX_RETRIES,
) -> Screening:
    """Sample *N* formalizations of *req* and cluster them by bidirectional agreement.

    Samples that fail every retry are dropped and noted; at least two must survive.
    """
    if N < 2:
        raise ValueError("screening needs N >= 2 samples")
    transcript = transcript if transcript is not None else Transcript()
    samples, dropped = [], []
    for i in range(N):
        try:
            samples.append(_sample(req, schema, provider, transcript, temperature, max_retries))
        except FormalizationError as exc:
            dropped.append(f"sample {i}: {exc}")
    if len(samples) < 2:
        raise ScreeningError(f"{req.id}: only {len(samples)} of {N} samples survived ({'; '.join(dropped)})")
    return Screening(cluster_samples(C, samples, pool, req.id), dropped)


@dataclass
class ClarificationRound:
    index: int
    text_in: str
    clusters: EncodingClusters
    witnesses_shown: str
    text_out: str
    result: Screening


@dataclass
class Clarification:
    requirement: Requirement
    rounds: list[ClarificationRound]
    converged: bool
    final: Screening

    @property
    def class_counts(self) -> list[int]:
        """Distinct-encoding count before clarification and after each round."""
        first = self.rounds[0].clusters if self.rounds else self.final.clusters
        return [len(first.classes)] + [len(r.result.clusters.classes) for r in self.rounds]


def format_assignment(w: dict, names: Optional[set] = None) -> str:
    keys = [k for k in w if names is None or k in names]
    return ", ".join(f"{k} = {format_value(w[k])}" for k in keys)


def describe_witnesses(clusters: EncodingClusters) -> str:
    lines = []
    reps = clusters.representatives
    for w in clusters.witnesses:
        if w.witness is None:
            lines.append(f"- classes {w.class_i + 1} and {w.class_j + 1}: solver could not decide")
            continue
        allow, forbid = (w.class_i, w.class_j) if w.direction == "i_not_j" else (w.class_j, w.class_i)
        names = free_vars(reps[w.class_i].whole()) | free_vars(reps[w.class_j].whole())
        lines.append(
            f"- {format_assignment(w.witness, names)}: allowed by class {allow + 1}, ruled out by class {forbid + 1}"
        )
    return "\n".join(lines) or "- none"


def clarify(
    req: Requirement,
    screening: Screening,
    schema: Schema,
    C: DomainConstraints,
    provider: Provider,
    pool: SessionPool,
    max_rounds: int = MAX_ROUNDS,
    N: int = DEFAULT_SAMPLES,
    transcript: Optional[Transcript] = None,
    temperature: float = CLARIFY_TEMPERATURE,
    screen_temperature: float = SCREEN_TEMPERATURE,
) -> Clarification:
    """Rewrite *req* with solver evidence until its samples converge or the round budget runs out.

    Non-convergence is reported through ``converged=False``, not raised.
    """
    transcript = transcript if transcript is not None else Transcript()
    current, state = req, screening
    rounds: list[ClarificationRound] = []
    while state.flagged and len(rounds) < max_rounds:
        clusters = state.clusters
        shown = describe_witnesses(clusters)
        reps = "\n".join(f"{i + 1}. {print_term(e.whole())}" for i, e in enumerate(clusters.representatives))
        variables = {
            "schema_variable_list": schema_variable_list(schema),
            "requirement_text": current.text,
            "class_count": str(len(clusters.classes)),
            "semantic_entropy": f"{clusters.entropy:.3f}",
            "class_representatives": reps,
            "witnesses": shown,
        }
        c, rec = transcript.call(provider, CompletionRequest("clarify", variables, temperature, key=req.id))
        text = c.text.strip()
        rec.outcome = "ok" if text else "empty"
        rewritten = replace(current, text=text) if text else current
        state = screen_ambiguity(rewritten, schema, C, provider, pool, N, transcript, screen_temperature)
        rounds.append(ClarificationRound(len(rounds), current.text, clusters, shown, rewritten.text, state))
        current = rewritten
    return Clarification(current, rounds, not state.flagged, state)
