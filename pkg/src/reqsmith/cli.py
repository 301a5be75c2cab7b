"""Command-line entry point: ``reqsmith {audit,ambiguity,roundtrip,mutate,cegr}``."""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Sequence

from .audit import audit_all, audit_consistency
from .equivalence import CATEGORIES, detect_mutation
from .formula import FormulaError, parse_term
from .model import (
    AssembledModel,
    Encoding,
    ModelError,
    assemble,
    constraints_from_json,
    DomainConstraints,
    encodings_from_json,
    load_json,
    load_schema,
    requirements_from_json,
)
from .pipeline.ambiguity import ScreeningError, clarify, screen_ambiguity
from .pipeline.formalize import FormalizationError, formalize
from .pipeline.providers import HttpProvider, Provider, ProviderError, ScriptedProvider, Transcript
from .pipeline.roundtrip import SIMILARITY_METRIC, round_trip
from .query import FeedbackMode, cegr_run, load_questions
from .report import (
    ambiguity_section,
    audit_section,
    build_report,
    cegr_section,
    exit_code,
    mutation_section,
    roundtrip_section,
    write_outputs,
)
from .solver import DEFAULT_TIMEOUT_MS, SessionPool, SolverConfig, SolverError

COMMANDS = ("audit", "ambiguity", "roundtrip", "mutate", "cegr")
BUILTIN_PREFIX = "builtin:"
PATH_KEYS = ("schema", "constraints", "requirements", "encodings", "questions", "mutations")


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    base: Path
    paths: dict[str, Optional[Path]]
    solver: SolverConfig = field(default_factory=SolverConfig)
    pool: int = 4
    provider: Optional[str] = None
    playbook: Optional[Path] = None
    samples: int = 5
    formalize_retries: int = 5
    clarify_rounds: int = 5
    cegr_iters: int = 5
    roundtrip_repairs: int = 5
    screen_temperature: float = 1.0
    clarify_temperature: float = 0.2
    temperature: float = 0.0
    modes: tuple[FeedbackMode, ...] = tuple(FeedbackMode)
    ambiguity_ids: Optional[list[str]] = None
    seed: Optional[int] = None

    def path(self, key: str, required: bool = True) -> Optional[Path]:
        p = self.paths.get(key)
        if p is None and required:
            raise ConfigError(f"config does not name a {key} file")
        return p

    def digest(self) -> str:
        """Hash of the effective settings and the content of every referenced input."""
        settings = {
            "solver": list(self.solver.command),
            "timeout_ms": self.solver.per_query_timeout,
            "pool": self.pool,
            "provider": self.provider,
            "samples": self.samples,
            "caps": [self.formalize_retries, self.clarify_rounds, self.cegr_iters, self.roundtrip_repairs],
            "temperatures": [self.screen_temperature, self.clarify_temperature, self.temperature],
            "modes": [m.value for m in self.modes],
            "ambiguity_ids": self.ambiguity_ids,
            "seed": self.seed,
            "inputs": {
                k: hashlib.sha256(p.read_bytes()).hexdigest() if p is not None else None
                for k, p in sorted({**self.paths, "playbook": self.playbook}.items())
            },
        }
        return hashlib.sha256(json.dumps(settings, sort_keys=True).encode()).hexdigest()[:16]


def resolve_config_path(spec: str) -> Path:
    if spec.startswith(BUILTIN_PREFIX):
        name = spec[len(BUILTIN_PREFIX):]
        p = Path(str(resources.files("reqsmith") / "data" / name / "config.json"))
        if not p.is_file():
            raise ConfigError(f"no bundled configuration named {name!r}")
        return p
    return Path(spec)


def load_config(spec: str, args: Optional[argparse.Namespace] = None, command: str = "") -> RunConfig:
    path = resolve_config_path(spec)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    base = path.resolve().parent
    ov = vars(args) if args is not None else {}

    def pick(key, default=None):
        v = ov.get(key)
        return v if v is not None else raw.get(key, default)

    def resolve(p) -> Optional[Path]:
        if p is None:
            return None
        p = Path(p)
        p = p if p.is_absolute() else base / p
        if not p.is_file():
            raise ConfigError(f"input file not found: {p}")
        return p

    playbook = pick("playbook")
    if isinstance(playbook, dict):
        playbook = playbook.get(command)
    if ov.get("playbook") is not None:
        playbook = ov["playbook"]
        playbook = str(Path(playbook).resolve())

    temps = raw.get("temperatures", {})
    modes = ov.get("mode") or raw.get("modes") or [m.value for m in FeedbackMode]
    try:
        cfg = RunConfig(
            base=base,
            paths={k: resolve(raw.get(k)) for k in PATH_KEYS},
            solver=SolverConfig(
                command=pick("solver", default=SolverConfig().command),
                per_query_timeout=int(pick("timeout_ms", default=DEFAULT_TIMEOUT_MS)),
            ),
            pool=int(pick("pool", default=4)),
            provider=pick("provider"),
            playbook=resolve(playbook),
            samples=int(pick("samples", default=5)),
            formalize_retries=int(raw.get("formalize_retries", 5)),
            clarify_rounds=int(raw.get("clarify_rounds", 5)),
            cegr_iters=int(pick("max_iters", default=5)),
            roundtrip_repairs=int(raw.get("roundtrip_repairs", 5)),
            screen_temperature=float(temps.get("screen", 1.0)),
            clarify_temperature=float(temps.get("clarify", 0.2)),
            temperature=float(temps.get("generate", 0.0)),
            modes=tuple(FeedbackMode(m) for m in modes),
            ambiguity_ids=raw.get("ambiguity_ids"),
            seed=pick("seed"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration value: {exc}") from exc
    caps = {
        "pool": cfg.pool, "formalize_retries": cfg.formalize_retries, "clarify_rounds": cfg.clarify_rounds,
        "max_iters": cfg.cegr_iters, "roundtrip_repairs": cfg.roundtrip_repairs,
    }
    for name, v in caps.items():
        if v < 1:
            raise ConfigError(f"{name} must be at least 1")
    if cfg.samples < 2:
        raise ConfigError("samples must be at least 2")
    if cfg.provider not in (None, "http", "scripted"):
        raise ConfigError(f"unknown provider {cfg.provider!r}")
    return cfg


def make_provider(cfg: RunConfig) -> Provider:
    if cfg.provider == "scripted":
        if cfg.playbook is None:
            raise ConfigError("the scripted provider needs a playbook")
        return ScriptedProvider.load(cfg.playbook)
    if cfg.provider == "http":
        return HttpProvider.from_env()
    raise ConfigError("this command needs a provider (--provider http|scripted)")


def load_inputs(cfg: RunConfig):
    schema = load_schema(cfg.path("schema"))
    cpath = cfg.path("constraints", required=False)
    C = constraints_from_json(load_json(cpath), schema) if cpath else DomainConstraints()
    reqs = requirements_from_json(load_json(cfg.path("requirements")))
    return schema, C, reqs


def load_assembled(cfg: RunConfig) -> AssembledModel:
    schema, C, reqs = load_inputs(cfg)
    encs = encodings_from_json(load_json(cfg.path("encodings")), schema)
    return assemble(schema, C, reqs, encs)


@dataclass
class Outcome:
    section: dict
    findings: list
    statistics: dict
    transcript: Optional[Transcript] = None


def cmd_audit(cfg: RunConfig) -> Outcome:
    schema, C, reqs = load_inputs(cfg)
    transcript = None
    with SessionPool(cfg.solver, schema, cfg.pool) as pool:
        if cfg.paths.get("encodings") is not None:
            encs = encodings_from_json(load_json(cfg.paths["encodings"]), schema)
        else:
            generated, transcript = formalize(
                reqs, schema, C, make_provider(cfg), pool,
                max_retries=cfg.formalize_retries, temperature=cfg.temperature,
            )
            encs = list(generated.values())
        m = assemble(schema, C, reqs, encs)
        consistency, outcomes = audit_all(m, pool)
    section, findings, stats = audit_section(consistency, outcomes)
    return Outcome(section, findings, stats, transcript)


def cmd_ambiguity(cfg: RunConfig) -> Outcome:
    schema, C, reqs = load_inputs(cfg)
    if cfg.ambiguity_ids is not None:
        wanted = set(cfg.ambiguity_ids)
        unknown = wanted - {r.id for r in reqs}
        if unknown:
            raise ConfigError(f"ambiguity_ids names unknown requirements: {', '.join(sorted(unknown))}")
        reqs = [r for r in reqs if r.id in wanted]
    provider = make_provider(cfg)
    transcript = Transcript()
    entries = []
    clarified: list[Encoding] = []
    with SessionPool(cfg.solver, schema, cfg.pool) as pool:
        for req in sorted(reqs, key=lambda r: r.id):
            screening = screen_ambiguity(req, schema, C, provider, pool, cfg.samples, transcript, cfg.screen_temperature)
            clar = None
            if screening.flagged:
                clar = clarify(
                    req, screening, schema, C, provider, pool, cfg.clarify_rounds, cfg.samples, transcript,
                    cfg.clarify_temperature, cfg.screen_temperature,
                )
                if clar.converged:
                    clarified.append(clar.final.clusters.representatives[0])
            entries.append((req.id, req.text, screening, clar))
        after = None
        if clarified and cfg.paths.get("encodings") is not None:
            m = load_assembled(cfg)
            for enc in clarified:
                m = m.replace(enc)
            after = audit_consistency(m, pool)
    section, findings, stats = ambiguity_section(entries, after)
    return Outcome(section, findings, stats, transcript)


def cmd_roundtrip(cfg: RunConfig) -> Outcome:
    m = load_assembled(cfg)
    provider = make_provider(cfg)
    with SessionPool(cfg.solver, m.schema, cfg.pool) as pool:
        results, transcript = round_trip(
            m, provider, pool, max_repairs=cfg.roundtrip_repairs, max_retries=cfg.formalize_retries
        )
    section, findings, stats = roundtrip_section(results, SIMILARITY_METRIC)
    return Outcome(section, findings, stats, transcript)


def load_mutations(path: Optional[Path], m: AssembledModel) -> list[tuple[dict, Encoding]]:
    """Read a mutation corpus: ``{req_id, category, mutated_text, mutated_encoding: {guard, body}}`` per entry.

    ``id`` and ``description`` are optional; ids default to the entry's position.
    """
    if path is None:
        return []
    out = []
    for i, d in enumerate(load_json(path)):
        meta = {"id": d.get("id", f"m{i + 1:02d}"), "description": d.get("description", ""),
                "mutated_text": d.get("mutated_text", ""), "category": d.get("category")}
        if d["req_id"] not in m.encodings:
            raise ModelError(f"mutant {meta['id']} targets unknown requirement {d['req_id']}")
        if meta["category"] not in CATEGORIES:
            raise ModelError(f"mutant {meta['id']}: category must be one of {', '.join(CATEGORIES)}")
        encoded = d["mutated_encoding"]
        guard = encoded.get("guard")
        enc = Encoding(
            d["req_id"],
            parse_term(guard, m.schema) if guard is not None else None,
            parse_term(encoded["body"], m.schema),
        )
        out.append((meta, enc))
    return out


def cmd_mutate(cfg: RunConfig) -> Outcome:
    m = load_assembled(cfg)
    mutants = load_mutations(cfg.path("mutations", required=False), m)
    entries = []
    with SessionPool(cfg.solver, m.schema, cfg.pool) as pool:
        for meta, enc in mutants:
            v = detect_mutation(m.constraints, m.encodings[enc.req_id], enc, m, pool, meta["category"])
            entries.append((meta, v))
    section, findings, stats = mutation_section(entries, CATEGORIES)
    return Outcome(section, findings, stats)


def cmd_cegr(cfg: RunConfig) -> Outcome:
    m = load_assembled(cfg)
    questions = load_questions(cfg.path("questions"), m.schema)
    for q in questions:
        for rid in q.relevant_req_ids:
            m.requirement(rid)
    provider = make_provider(cfg)
    transcript = Transcript()
    runs = []
    with SessionPool(cfg.solver, m.schema, cfg.pool) as pool:
        for q in questions:
            for mode in cfg.modes:
                runs.append(cegr_run(m, q, mode, provider, pool, cfg.cegr_iters, transcript, cfg.temperature))
    section, findings, stats = cegr_section(runs, cfg.modes)
    return Outcome(section, findings, stats, transcript)


HANDLERS: dict[str, Callable[[RunConfig], Outcome]] = {
    "audit": cmd_audit,
    "ambiguity": cmd_ambiguity,
    "roundtrip": cmd_roundtrip,
    "mutate": cmd_mutate,
    "cegr": cmd_cegr,
}

OPERATIONAL_ERRORS = (
    ConfigError, OSError, json.JSONDecodeError, KeyError, FormulaError, ModelError, SolverError,
    ProviderError, FormalizationError, ScreeningError,
)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True,
                        help=f"run configuration (JSON), or {BUILTIN_PREFIX}NAME for a bundled example")
    common.add_argument("--out", default="reqsmith-report", help="output directory (default: %(default)s)")
    common.add_argument("--solver", help="solver command line (default: z3 -in -smt2)")
    common.add_argument("--timeout-ms", dest="timeout_ms", type=int, help="per-query solver timeout")
    common.add_argument("--pool", type=int, help="solver sessions kept open (default 4)")
    common.add_argument("--provider", choices=("http", "scripted"))
    common.add_argument("--playbook", help="scripted provider playbook (JSON)")
    common.add_argument("--samples", type=int, help="formalization samples per requirement for screening")
    common.add_argument("--max-iters", dest="max_iters", type=int, help="repair iterations per question")
    common.add_argument("--seed", type=int, help="recorded for test-data generation; the pipeline itself is deterministic")

    parser = argparse.ArgumentParser(prog="reqsmith", description="Solver-backed requirements auditing.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "audit": "consistency, vacuousness, violatability and redundancy of every requirement",
        "ambiguity": "sample formalizations, cluster them, and clarify ambiguous requirements",
        "roundtrip": "informalize and re-formalize each requirement, then check agreement",
        "mutate": "check that seeded faults in the encodings are caught",
        "cegr": "verify answers to scenario questions with counterexample-guided repair",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=helps[name])
        if name == "cegr":
            p.add_argument("--mode", action="append", choices=[m.value for m in FeedbackMode],
                           help="feedback mode (repeatable; default: all four)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args, args.command)
        outcome = HANDLERS[args.command](cfg)
        report = build_report(
            args.command, cfg.digest(), outcome.section, outcome.findings, outcome.statistics,
            "transcripts.json" if outcome.transcript is not None else None,
        )
        out = write_outputs(args.out, report, outcome.transcript.to_json() if outcome.transcript is not None else None)
    except OPERATIONAL_ERRORS as exc:
        print(f"reqsmith {args.command}: error: {exc}", file=sys.stderr)
        return 2
    code = exit_code(report)
    s = report["summary"]
    print(f"reqsmith {args.command}: {s['fail']} FAIL, {s['warn']} WARN; report written to {out}")
    return code


if __name__ == "__main__":
    sys.exit(main())
