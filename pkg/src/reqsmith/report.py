"""Report assembly: JSON sections per stage, findings, statistics, and Markdown rendering."""

from __future__ import annotations

import copy
import datetime as _dt
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from . import __version__
from .audit import AuditOutcome, ConsistencyOutcome, Status
from .equivalence import EncodingClusters, MutationVerdict
from .formula import Value, format_value, print_term
from .pipeline.ambiguity import Clarification, Screening
from .pipeline.roundtrip import RoundTripResult
from .query import CegrRun, FeedbackMode, Label, QueryVerdict
from .stats import wilson_interval

SCHEMA_VERSION = "1.0"
FAIL = "FAIL"
WARN = "WARN"


@dataclass(frozen=True)
class Finding:
    severity: str
    kind: str
    subject: str
    message: str


def witness_json(w: Optional[Mapping[str, Value]]) -> Optional[dict]:
    """Booleans stay JSON booleans; rationals become exact strings such as ``"22.5"`` or ``"1/3"``."""
    if w is None:
        return None
    return {k: v if isinstance(v, bool) else format_value(v) for k, v in w.items()}


def core_json(core) -> Optional[list[str]]:
    return sorted(core) if core is not None else None


def statistic(successes: int, trials: int) -> dict:
    """Count, rate and 95% Wilson interval; zero-trial statistics carry no rate or interval."""
    out = {"successes": successes, "trials": trials}
    if trials:
        lo, hi = wilson_interval(successes, trials)
        out.update(rate=successes / trials, ci95=[lo, hi])
    return out


# ---------------------------------------------------------------------------
# audit


def audit_section(consistency: ConsistencyOutcome, outcomes: Sequence[AuditOutcome]):
    findings: list[Finding] = []
    if consistency.status is Status.NO:
        findings.append(Finding(FAIL, "inconsistent", "model",
                                f"no state satisfies all requirements; core: {', '.join(core_json(consistency.core) or [])}"))
    elif consistency.status is Status.INCONCLUSIVE:
        findings.append(Finding(WARN, "inconclusive", "model", f"consistency undecided ({consistency.reason})"))
    rows = []
    for o in outcomes:
        rows.append({
            "id": o.req_id,
            "kind": o.kind.value,
            "vacuous": o.vacuous.value,
            "guard_witness": witness_json(o.vacuous_witness),
            "violatable": o.violatable.value,
            "violation_witness": witness_json(o.violation_witness),
            "redundant": o.redundant.value,
            "redundancy_core": core_json(o.redundancy_core),
            "redundancy_witness": witness_json(o.redundancy_witness),
        })
        if o.vacuous is Status.YES:
            findings.append(Finding(FAIL, "vacuous", o.req_id, "guard is unsatisfiable under the domain constraints"))
        if o.redundant is Status.YES:
            findings.append(Finding(WARN, "redundant", o.req_id,
                                    f"already enforced by {', '.join(core_json(o.redundancy_core) or [])}"))
        if o.violatable is Status.NO:
            findings.append(Finding(WARN, "not_violatable", o.req_id, "cannot be broken under the domain constraints"))
        for check in ("vacuous", "violatable", "redundant"):
            if getattr(o, check) is Status.INCONCLUSIVE:
                findings.append(Finding(WARN, "inconclusive", o.req_id, f"{check} check undecided"))
    conditional = [o for o in outcomes if o.vacuous is not Status.NOT_APPLICABLE]
    section = {
        "consistency": {
            "status": consistency.status.value,
            "witness": witness_json(consistency.witness),
            "core": core_json(consistency.core),
            "reason": consistency.reason,
        },
        "requirements": rows,
        "redundant": [o.req_id for o in outcomes if o.redundant is Status.YES],
        "vacuous": [o.req_id for o in outcomes if o.vacuous is Status.YES],
    }
    stats = {
        "redundant": statistic(sum(o.redundant is Status.YES for o in outcomes), len(outcomes)),
        "violatable": statistic(sum(o.violatable is Status.YES for o in outcomes), len(outcomes)),
        "non_vacuous_conditional": statistic(sum(o.vacuous is Status.NO for o in conditional), len(conditional)),
    }
    return section, findings, stats


# ---------------------------------------------------------------------------
# ambiguity


def clusters_json(c: EncodingClusters) -> dict:
    agreeing, total = c.pairwise_agreement
    return {
        "samples": len(c.samples),
        "classes": c.classes,
        "class_count": len(c.classes),
        "representatives": [print_term(e.whole()) for e in c.representatives],
        "pairwise_agreement": {"agreeing": agreeing, "pairs": total},
        "entropy_nats": round(c.entropy, 12),
        "inconclusive": c.inconclusive,
        "full_pairwise": c.full_pairwise,
        "witnesses": [
            {"class_i": w.class_i, "class_j": w.class_j, "direction": w.direction, "witness": witness_json(w.witness)}
            for w in c.witnesses
        ],
    }


def ambiguity_section(
    entries: Sequence[tuple[str, str, Screening, Optional[Clarification]]],
    consistency_after: Optional[ConsistencyOutcome],
):
    """*entries* holds ``(req_id, original_text, screening, clarification)`` per screened requirement."""
    findings: list[Finding] = []
    rows = []
    agreeing = pairs = 0
    flagged_classes = []
    for rid, text, screening, clar in entries:
        c = screening.clusters
        a, p = c.pairwise_agreement
        agreeing, pairs = agreeing + a, pairs + p
        row = {"id": rid, "text": text, "flagged": screening.flagged, "dropped_samples": screening.dropped,
               "screening": clusters_json(c), "clarification": None}
        if screening.flagged:
            flagged_classes.append(len(c.classes))
            findings.append(Finding(WARN, "ambiguous", rid, f"{len(c.classes)} inequivalent readings among {len(c.samples)} samples"))
        if clar is not None:
            row["clarification"] = {
                "rounds": [
                    {"index": r.index, "text_in": r.text_in, "class_count": len(r.clusters.classes),
                     "witnesses_shown": r.witnesses_shown, "text_out": r.text_out,
                     "rescreen": clusters_json(r.result.clusters)}
                    for r in clar.rounds
                ],
                "class_counts": clar.class_counts,
                "converged": clar.converged,
                "clarified_text": clar.requirement.text,
            }
            if not clar.converged:
                findings.append(Finding(WARN, "nonconvergence", rid,
                                        f"still {len(clar.final.clusters.classes)} readings after {len(clar.rounds)} rounds"))
        rows.append(row)
    section = {"requirements": rows, "flagged": [r["id"] for r in rows if r["flagged"]]}
    if consistency_after is not None:
        section["consistency_after_clarification"] = consistency_after.status.value
        if consistency_after.status is Status.NO:
            findings.append(Finding(FAIL, "inconsistent", "model", "clarified encodings make the model inconsistent"))
    stats = {
        "flagged": statistic(len(flagged_classes), len(rows)),
        "pairwise_agreement": statistic(agreeing, pairs),
    }
    if flagged_classes:
        stats["mean_classes_per_flagged"] = sum(flagged_classes) / len(flagged_classes)
    return section, findings, stats


# ---------------------------------------------------------------------------
# round trip


def roundtrip_section(results: Sequence[RoundTripResult], metric: str):
    findings: list[Finding] = []
    rows = []
    for r in results:
        v = r.agreement
        rows.append({
            "id": r.req_id,
            "original_text": r.original_text,
            "reconstructed_text": r.reconstructed_text,
            "agree": r.agrees,
            "inconclusive": bool(v and v.inconclusive),
            "witness": witness_json(v.witness) if v is not None else None,
            "similarity": r.similarity,
            "repair_rounds": r.repair_rounds,
            "reconstructed_encoding": r.encoding.text() if r.encoding is not None else None,
            "error": r.error,
        })
        if r.error:
            findings.append(Finding(WARN, "roundtrip_error", r.req_id, r.error))
        elif not r.agrees:
            findings.append(Finding(WARN, "roundtrip_mismatch", r.req_id,
                                    f"reconstruction still disagrees after {r.repair_rounds} repair rounds"))
    sims = [r.similarity for r in results if r.similarity is not None]
    stats = {
        "agree": statistic(sum(r.agrees for r in results), len(results)),
        "agree_without_repair": statistic(sum(r.agrees and r.repair_rounds == 0 for r in results), len(results)),
    }
    section = {"similarity_metric": metric, "mean_similarity": sum(sims) / len(sims) if sims else None, "requirements": rows}
    return section, findings, stats


# ---------------------------------------------------------------------------
# mutation


def mutation_section(entries: Sequence[tuple[Mapping, MutationVerdict]], categories: Iterable[str]):
    """*entries* pairs each mutant's metadata (id, description) with its verdict."""
    findings: list[Finding] = []
    rows = []
    for meta, v in entries:
        rows.append({
            "id": meta["id"],
            "req_id": v.req_id,
            "category": v.category,
            "description": meta.get("description", ""),
            "mutated_text": meta.get("mutated_text", ""),
            "detected": v.detected,
            "via": v.via.value,
            "direction": v.direction,
            "witness": witness_json(v.witness),
            "model_consistent": v.model_consistent,
            "core": core_json(v.core),
        })
        if not v.detected:
            kind = "undetected_mutant" if v.via.value == "undetected" else "inconclusive"
            findings.append(Finding(WARN, kind, meta["id"], f"{v.category} mutant of {v.req_id} not caught"))
    stats = {"detected": statistic(sum(r["detected"] for r in rows), len(rows))}
    for cat in categories:
        sub = [r for r in rows if r["category"] == cat]
        stats[f"detected_{cat}"] = statistic(sum(r["detected"] for r in sub), len(sub))
    return {"mutants": rows}, findings, stats


# ---------------------------------------------------------------------------
# cegr


def verdict_json(v: Optional[QueryVerdict]) -> Optional[dict]:
    if v is None:
        return None
    return {
        "label": v.label.value,
        "counterexample": witness_json(v.counterexample),
        "violated_reqs": v.violated_reqs,
        "degenerate": v.degenerate,
        "reason": v.reason,
    }


def cegr_section(runs: Sequence[CegrRun], modes: Sequence[FeedbackMode]):
    findings: list[Finding] = []
    rows = []
    for run in runs:
        rows.append({
            "question_id": run.question_id,
            "mode": run.mode.value,
            "final": verdict_json(run.final),
            "iterations_used": run.iterations_used,
            "attempts": [
                {"answer": dict(a.answer.actions) if a.answer else None, "verdict": verdict_json(a.verdict),
                 "feedback": a.feedback, "error": a.error}
                for a in run.attempts
            ],
        })
        subject = f"{run.question_id}/{run.mode.value}"
        if run.final.label is Label.VIOLATION:
            findings.append(Finding(FAIL, "violation", subject,
                                    f"final answer violates {', '.join(run.final.violated_reqs or []) or 'the requirements'}"))
        elif run.final.label is Label.UNKNOWN:
            findings.append(Finding(WARN, "unknown", subject, run.final.reason or "verifier undecided"))
        if run.final.degenerate:
            findings.append(Finding(WARN, "degenerate_answer", subject, "answer asserts nothing"))
    stats = {}
    for mode in modes:
        sub = [r for r in runs if r.mode is mode]
        stats[f"safe_{mode.value}"] = statistic(sum(r.final.label is Label.SAFE for r in sub), len(sub))
        stats[f"safe_first_attempt_{mode.value}"] = statistic(
            sum(bool(r.attempts) and r.attempts[0].verdict is not None and r.attempts[0].verdict.label is Label.SAFE
                for r in sub),
            len(sub),
        )
    return {"runs": rows}, findings, stats


# ---------------------------------------------------------------------------
# report


def build_report(
    command: str,
    config_hash: str,
    section: dict,
    findings: Sequence[Finding],
    statistics: Mapping[str, object],
    transcripts: Optional[str] = None,
    now: Optional[_dt.datetime] = None,
) -> dict:
    now = now or _dt.datetime.now(_dt.timezone.utc)
    fails = sum(f.severity == FAIL for f in findings)
    return {
        "schema_version": SCHEMA_VERSION,
        "tool": {"name": "reqsmith", "version": __version__},
        "command": command,
        "generated_at": now.isoformat(timespec="seconds"),
        "config_hash": config_hash,
        "summary": {"findings": len(findings), "fail": fails, "warn": len(findings) - fails},
        "findings": [asdict(f) for f in findings],
        "statistics": dict(statistics),
        command: section,
        "transcripts": transcripts,
    }


def scrub(report: Mapping) -> dict:
    """Copy of *report* with run-specific timestamps removed, for byte comparison."""
    out = copy.deepcopy(dict(report))
    out["generated_at"] = None
    return out


def dumps(report: Mapping) -> str:
    return json.dumps(report, indent=2, ensure_ascii=False) + "\n"


def exit_code(report: Mapping) -> int:
    return 1 if report["summary"]["findings"] else 0


def _pct(x: float) -> str:
    return f"{x * 100:.1f}"


def _stat_line(name: str, s: Mapping) -> str:
    if "ci95" not in s:
        return f"| {name} | {s['successes']}/{s['trials']} | n/a | n/a |"
    lo, hi = s["ci95"]
    return f"| {name} | {s['successes']}/{s['trials']} | {_pct(s['rate'])}% | [{_pct(lo)}, {_pct(hi)}] |"


def _fmt_witness(w: Optional[Mapping]) -> str:
    if not w:
        return ""
    return ", ".join(f"{k}={str(v).lower() if isinstance(v, bool) else v}" for k, v in w.items())


def render_markdown(report: Mapping) -> str:
    """Markdown view computed only from the JSON report."""
    cmd = report["command"]
    lines = [f"# reqsmith {cmd} report", ""]
    lines.append(f"- tool version: {report['tool']['version']} (report schema {report['schema_version']})")
    lines.append(f"- config hash: `{report['config_hash']}`")
    if report.get("generated_at"):
        lines.append(f"- generated: {report['generated_at']}")
    s = report["summary"]
    lines += [f"- findings: {s['findings']} ({s['fail']} FAIL, {s['warn']} WARN)", ""]

    lines += ["## Findings", ""]
    if report["findings"]:
        lines += ["| severity | kind | subject | detail |", "|---|---|---|---|"]
        lines += [f"| {f['severity']} | {f['kind']} | {f['subject']} | {f['message']} |" for f in report["findings"]]
    else:
        lines.append("None.")
    lines.append("")

    counts = {k: v for k, v in report["statistics"].items() if isinstance(v, Mapping)}
    scalars = {k: v for k, v in report["statistics"].items() if not isinstance(v, Mapping)}
    if counts or scalars:
        lines += ["## Statistics", ""]
        if counts:
            lines += ["| metric | count | rate | 95% Wilson CI |", "|---|---|---|---|"]
            lines += [_stat_line(k, v) for k, v in counts.items()]
        for k, v in scalars.items():
            lines.append(f"- {k}: {v:.3f}" if isinstance(v, float) else f"- {k}: {v}")
        lines.append("")

    body = report[cmd]
    lines += ["## Details", ""]
    lines += _DETAIL[cmd](body)
    if report.get("transcripts"):
        lines += ["", f"Provider transcripts: `{report['transcripts']}`"]
    return "\n".join(lines).rstrip() + "\n"


def _audit_md(b: Mapping) -> list[str]:
    c = b["consistency"]
    out = [f"Consistency: **{c['status']}**" + (f" (core: {', '.join(c['core'])})" if c.get("core") else ""), ""]
    out += ["| id | kind | vacuous | violatable | redundant | core |", "|---|---|---|---|---|---|"]
    for r in b["requirements"]:
        core = ", ".join(r["redundancy_core"] or [])
        out.append(f"| {r['id']} | {r['kind']} | {r['vacuous']} | {r['violatable']} | {r['redundant']} | {core} |")
    return out


def _ambiguity_md(b: Mapping) -> list[str]:
    out = ["| id | flagged | classes | pairwise agreement | entropy (nats) |", "|---|---|---|---|---|"]
    for r in b["requirements"]:
        sc = r["screening"]
        pa = sc["pairwise_agreement"]
        out.append(f"| {r['id']} | {r['flagged']} | {sc['class_count']} | {pa['agreeing']}/{pa['pairs']} | {sc['entropy_nats']:.3f} |")
    for r in b["requirements"]:
        if not r["flagged"]:
            continue
        out += ["", f"### {r['id']}", "", f"Original: {r['text']}", ""]
        for i, rep in enumerate(r["screening"]["representatives"]):
            out.append(f"- class {i + 1}: `{rep}`")
        for w in r["screening"]["witnesses"]:
            out.append(f"- witness ({w['direction']}, classes {w['class_i'] + 1}/{w['class_j'] + 1}): {_fmt_witness(w['witness'])}")
        cl = r["clarification"]
        if cl:
            out += ["", f"Class counts per round: {cl['class_counts']}; converged: {cl['converged']}", "",
                    f"Clarified text (for review): {cl['clarified_text']}"]
    if "consistency_after_clarification" in b:
        out += ["", f"Consistency after clarification: **{b['consistency_after_clarification']}**"]
    return out


def _roundtrip_md(b: Mapping) -> list[str]:
    mean = b["mean_similarity"]
    out = [f"Text similarity metric: {b['similarity_metric']}" + (f" (mean {mean:.3f})" if mean is not None else ""), ""]
    out += ["| id | agree | similarity | repair rounds | error |", "|---|---|---|---|---|"]
    for r in b["requirements"]:
        sim = f"{r['similarity']:.3f}" if r["similarity"] is not None else ""
        out.append(f"| {r['id']} | {r['agree']} | {sim} | {r['repair_rounds']} | {r['error'] or ''} |")
    return out


def _mutation_md(b: Mapping) -> list[str]:
    if not b["mutants"]:
        return ["No mutants."]
    out = ["| mutant | req | category | detected | via | witness |", "|---|---|---|---|---|---|"]
    for r in b["mutants"]:
        out.append(f"| {r['id']} | {r['req_id']} | {r['category']} | {r['detected']} | {r['via']} | {_fmt_witness(r['witness'])} |")
    return out


def _cegr_md(b: Mapping) -> list[str]:
    out = ["| question | mode | final | iterations | violated |", "|---|---|---|---|---|"]
    for r in b["runs"]:
        f = r["final"]
        out.append(f"| {r['question_id']} | {r['mode']} | {f['label']} | {r['iterations_used']} | {', '.join(f['violated_reqs'] or [])} |")
    return out


_DETAIL = {
    "audit": _audit_md,
    "ambiguity": _ambiguity_md,
    "roundtrip": _roundtrip_md,
    "mutate": _mutation_md,
    "cegr": _cegr_md,
}


def write_outputs(out_dir, report: Mapping, transcript_json: Optional[list] = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(dumps(report), encoding="utf-8")
    (out / "report.md").write_text(render_markdown(report), encoding="utf-8")
    if transcript_json is not None:
        (out / "transcripts.json").write_text(json.dumps(transcript_json, indent=2, ensure_ascii=False) + "\n",
                                              encoding="utf-8")
    return out
