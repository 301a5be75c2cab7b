"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines, or
directly with ``python tests/test_acceptance.py``.
"""

import contextlib
import io
import json
import random
import sys
import time
from fractions import Fraction

import pytest

from helpers import (
    CEGR,
    HEMO,
    SoundnessRecorder,
    bool_schema,
    cegr_model,
    hemodialysis_model,
    make_pool,
    oracle_agree,
    oracle_audit,
    random_bool_model,
    random_bool_term,
    reference_wilson,
)
from reqsmith import cli
from reqsmith.audit import audit_all
from reqsmith.equivalence import CATEGORIES, MUTANT_PERMITS, Detection, check_agreement, detect_mutation
from reqsmith.formula import evaluate
from reqsmith.model import Encoding
from reqsmith.pipeline.ambiguity import clarify, screen_ambiguity
from reqsmith.pipeline.providers import ScriptedProvider
from reqsmith.pipeline.roundtrip import round_trip
from reqsmith.query import FeedbackMode, Label, cegr_run, load_questions
from reqsmith.report import dumps, scrub
from reqsmith.stats import as_percent, wilson_interval


def verdict(n, ok, detail):
    print(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
    assert ok, detail


def quiet_main(argv):
    with contextlib.redirect_stdout(io.StringIO()):
        return cli.main(argv)


class Clock:
    def __enter__(self):
        self.start = time.monotonic()
        return self

    def __exit__(self, *exc):
        self.seconds = time.monotonic() - self.start


def test_criterion_1_redundancy(tmp_path):
    with Clock() as clock:
        code = quiet_main(["audit", "--config", "builtin:hemodialysis", "--out", str(tmp_path)])
    report = json.loads((tmp_path / "report.json").read_text())
    rows = {r["id"]: r for r in report["audit"]["requirements"]}
    problems = []
    if report["audit"]["redundant"] != ["r11", "r56"]:
        problems.append(f"redundant = {report['audit']['redundant']}")
    for rid, subsumer in (("r11", "req_r55"), ("r56", "req_r42")):
        if subsumer not in (rows[rid]["redundancy_core"] or []):
            problems.append(f"{rid} core {rows[rid]['redundancy_core']} lacks {subsumer}")
        if rows[rid]["vacuous"] != "no":
            problems.append(f"{rid} vacuous = {rows[rid]['vacuous']}")
    if code != 1:
        problems.append(f"exit code {code}")
    if clock.seconds >= 5:
        problems.append(f"took {clock.seconds:.1f} s")
    verdict(1, not problems, "; ".join(problems) or f"r11 <- r55, r56 <- r42 in {clock.seconds:.2f} s")


def test_criterion_2_boundary_ambiguity():
    m = hemodialysis_model()
    provider = ScriptedProvider.load(HEMO / "playbooks" / "ambiguity.json")
    problems, notes = [], []
    with Clock() as clock, make_pool(m.schema, 4) as pool:
        for rid in ("r23", "r24"):
            req = m.requirement(rid)
            first = screen_ambiguity(req, m.schema, m.constraints, provider, pool, N=5)
            flows = [w.witness["sad_flow"] for w in first.clusters.witnesses if w.witness]
            if len(first.clusters.classes) < 2:
                problems.append(f"{rid}: only {len(first.clusters.classes)} class")
            if Fraction(200) not in flows:
                problems.append(f"{rid}: witness flows {flows}")
            result = clarify(req, first, m.schema, m.constraints, provider, pool, N=5)
            if not result.converged or result.class_counts[-1] != 1:
                problems.append(f"{rid}: class counts {result.class_counts}")
            notes.append(f"{rid} {result.class_counts}")
    if clock.seconds >= 10:
        problems.append(f"took {clock.seconds:.1f} s")
    verdict(2, not problems, "; ".join(problems) or f"witness sad_flow = 200, classes {', '.join(notes)}")


def test_criterion_3_mutation_detection():
    m = hemodialysis_model()
    mutants = cli.load_mutations(HEMO / "mutations.json", m)
    problems = []
    detected = []
    with Clock() as clock, make_pool(m.schema, 4) as pool:
        for meta, enc in mutants:
            original = m.encodings[enc.req_id]
            v = detect_mutation(m.constraints, original, enc, m, pool, meta["category"])
            if v.model_consistent is not True:
                problems.append(f"{meta['id']}: replaced model consistent = {v.model_consistent}")
            if v.detected:
                detected.append(meta["id"])
            if v.via is Detection.DISTINGUISHABLE:
                w = v.witness
                in_c = all(evaluate(t, w) for _, t in m.constraints)
                mut, orig = evaluate(enc.whole(), w), evaluate(original.whole(), w)
                expected = (True, False) if v.direction == MUTANT_PERMITS else (False, True)
                if not in_c or (mut, orig) != expected:
                    problems.append(f"{meta['id']}: witness does not separate the encodings")
    ids = [meta["id"] for meta, _ in mutants]
    if len(mutants) != 12 or {meta["category"] for meta, _ in mutants} != set(CATEGORIES):
        problems.append("corpus must hold 12 mutants over all four categories")
    if sorted(set(ids) - set(detected)) != ["m09"]:
        problems.append(f"undetected: {sorted(set(ids) - set(detected))}")
    if clock.seconds >= 30:
        problems.append(f"took {clock.seconds:.1f} s")
    verdict(3, not problems, "; ".join(problems) or f"{len(detected)}/12 detected, m09 indistinguishable, all models SAT")


def test_criterion_4_cegr_mechanics():
    m = cegr_model()
    q1 = {q.question_id: q for q in load_questions(CEGR / "questions.json", m.schema)}["q1"]
    runs = {}
    with Clock() as clock, make_pool(m.schema, 2) as pool:
        for playbook, mode in [
            ("playbook_counterexample.json", FeedbackMode.FULL_CEGR),
            ("playbook_counterexample.json", FeedbackMode.BASELINE),
            ("playbook_requirements.json", FeedbackMode.REQUIREMENTS_ONLY),
            ("playbook_requirements.json", FeedbackMode.BASELINE),
        ]:
            runs[playbook, mode] = cegr_run(m, q1, mode, ScriptedProvider.load(CEGR / playbook), pool)
    full = runs["playbook_counterexample.json", FeedbackMode.FULL_CEGR]
    base = runs["playbook_counterexample.json", FeedbackMode.BASELINE]
    reqs = runs["playbook_requirements.json", FeedbackMode.REQUIREMENTS_ONLY]
    base2 = runs["playbook_requirements.json", FeedbackMode.BASELINE]
    problems = []
    if not (full.final.label is Label.SAFE and full.iterations_used <= 1):
        problems.append(f"full_cegr {full.final.label.value} after {full.iterations_used}")
    if not (base.final.label is Label.VIOLATION and base.iterations_used == 5):
        problems.append(f"baseline {base.final.label.value} after {base.iterations_used}")
    if reqs.final.label is not Label.SAFE:
        problems.append(f"requirements_only {reqs.final.label.value}")
    if base2.final.label is Label.SAFE:
        problems.append("baseline reached SAFE on the requirements playbook")
    if clock.seconds >= 10:
        problems.append(f"took {clock.seconds:.1f} s")
    verdict(4, not problems, "; ".join(problems) or
            f"full_cegr SAFE at {full.iterations_used}, baseline VIOLATION at 5, requirements_only SAFE")


def test_criterion_5_wilson_intervals():
    published = {(2, 64): (0.9, 10.7), (64, 64): (94.3, 100.0), (39, 39): (91.0, 100.0), (0, 64): (0.0, 5.7)}
    problems = [f"{k} -> {as_percent(wilson_interval(*k))}" for k, v in published.items()
                if as_percent(wilson_interval(*k)) != v]
    rng = random.Random(7)
    worst = 0.0
    for _ in range(1000):
        n = rng.randint(1, 10_000)
        s = rng.randint(0, n)
        got, ref = wilson_interval(s, n), reference_wilson(s, n)
        worst = max(worst, abs(got[0] - ref[0]), abs(got[1] - ref[1]))
    if worst >= 1e-9:
        problems.append(f"max deviation {worst:.2e}")
    verdict(5, not problems, "; ".join(problems) or f"4 published intervals exact, max deviation {worst:.1e}")


def test_criterion_6_oracle_equivalence():
    rng = random.Random(20241015)
    mismatches = []
    pools = {}
    trials = 200
    with Clock() as clock:
        try:
            for trial in range(trials):
                n_vars, n_reqs = rng.randint(1, 12), rng.randint(1, 8)
                m = random_bool_model(rng, n_vars, n_reqs, rng.randint(0, 2))
                if n_vars not in pools:
                    pools[n_vars] = make_pool(m.schema, 4)
                pool = pools[n_vars]
                consistency, outcomes = audit_all(m, pool)
                want_consistency, want = oracle_audit(m)
                got = {o.req_id: (o.vacuous.value, o.violatable.value, o.redundant.value) for o in outcomes}
                if consistency.status.value != want_consistency or got != want:
                    mismatches.append(("audit", trial))
                names = [v.name for v in bool_schema(n_vars)]
                ta = random_bool_term(rng, names, 3)
                tb = ta if rng.random() < 0.15 else random_bool_term(rng, names, 3)
                v = check_agreement(m.constraints, Encoding("a", None, ta), Encoding("a", None, tb), pool)
                if (v.a_not_b is not None, v.b_not_a is not None) != oracle_agree(m.schema, m.constraints, ta, tb):
                    mismatches.append(("agreement", trial))
        finally:
            for p in pools.values():
                p.close()
    problems = [f"mismatches {mismatches[:5]}"] if mismatches else []
    if clock.seconds >= 300:
        problems.append(f"took {clock.seconds:.0f} s")
    verdict(6, not problems, "; ".join(problems) or f"{trials} models, 0 mismatches in {clock.seconds:.1f} s")


def test_criterion_7_soundness():
    rng = random.Random(99)
    with SoundnessRecorder() as rec:
        m = hemodialysis_model()
        with make_pool(m.schema, 4) as pool:
            audit_all(m, pool)
            for meta, enc in cli.load_mutations(HEMO / "mutations.json", m):
                detect_mutation(m.constraints, m.encodings[enc.req_id], enc, m, pool, meta["category"])
        for _ in range(30):
            rm = random_bool_model(rng, rng.randint(1, 8), rng.randint(1, 6))
            with make_pool(rm.schema, 2) as pool:
                audit_all(rm, pool)
    checked, failures = rec.recheck_cores()
    problems = []
    if rec.witness_failures:
        problems.append(f"{len(rec.witness_failures)} witnesses falsify their query")
    if failures:
        problems.append(f"{len(failures)} cores satisfiable in isolation")
    if not rec.sat_checked or not checked:
        problems.append("workload produced no witnesses or no cores")
    verdict(7, not problems, "; ".join(problems) or f"{rec.sat_checked} witnesses and {checked} cores re-checked")


def test_criterion_8_round_trip():
    m = hemodialysis_model()
    provider = ScriptedProvider.load(HEMO / "playbooks" / "roundtrip.json")
    with make_pool(m.schema, 2) as pool:
        results, _ = round_trip(m, provider, pool)
    rounds = {r.req_id: r.repair_rounds for r in results}
    problems = []
    if not all(r.agrees for r in results):
        problems.append(f"disagree: {[r.req_id for r in results if not r.agrees]}")
    if rounds.pop("r32", None) != 1 or set(rounds.values()) != {0}:
        problems.append(f"repair rounds {rounds}")
    verdict(8, not problems, "; ".join(problems) or f"{len(results)} agree, r32 repaired in 1 round")


def test_criterion_9_determinism(tmp_path):
    differing = []
    for command, config in [
        ("audit", "builtin:hemodialysis"),
        ("ambiguity", "builtin:hemodialysis"),
        ("roundtrip", "builtin:hemodialysis"),
        ("mutate", "builtin:hemodialysis"),
        ("cegr", "builtin:cegr"),
    ]:
        texts = []
        for run in ("first", "second"):
            out = tmp_path / command / run
            quiet_main([command, "--config", config, "--out", str(out)])
            texts.append(dumps(scrub(json.loads((out / "report.json").read_text()))))
        if texts[0] != texts[1]:
            differing.append(command)
    verdict(9, not differing, f"report.json differs for {differing}" if differing
            else "all five subcommands byte-identical across two runs")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-s", "-q"]))
