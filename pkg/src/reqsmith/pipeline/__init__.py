"""LLM-facing pipeline stages: formalization, ambiguity screening, round-trip checks."""

from .ambiguity import Clarification, ClarificationRound, Screening, ScreeningError, clarify, screen_ambiguity
from .formalize import CoverageGap, FormalizationError, RetryBudgetExhausted, formalize
from .providers import (
    CompletionRequest,
    HttpProvider,
    PlaybookEntry,
    Provider,
    ProviderError,
    ScriptedProvider,
    ScriptExhausted,
    TemplateSet,
    Transcript,
)
from .roundtrip import RoundTripResult, jaccard_similarity, round_trip

__all__ = [
    "Clarification", "ClarificationRound", "CompletionRequest", "CoverageGap", "FormalizationError",
    "HttpProvider", "PlaybookEntry", "Provider", "ProviderError", "RetryBudgetExhausted", "RoundTripResult",
    "Screening", "ScreeningError", "ScriptExhausted", "ScriptedProvider", "TemplateSet", "Transcript",
    "clarify", "formalize", "jaccard_similarity", "round_trip", "screen_ambiguity",
]
