"""SMT-LIB2 solver sessions over a child process's stdin/stdout.

One :class:`Session` owns one solver process.  Every batch of commands is
followed by an ``(echo ...)`` sentinel so responses can be framed without
relying on ``:print-success``.
"""

from __future__ import annotations

import contextlib
import enum
import itertools
import logging
import queue
import shlex
import subprocess
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional, Sequence

from .formula import (
    FormulaError,
    Schema,
    SExpr,
    Sort,
    Term,
    is_simple_symbol,
    parse_value,
    print_term,
    read_sexprs,
)

log = logging.getLogger(__name__)

DEFAULT_COMMAND = ("z3", "-in", "-smt2")
DEFAULT_TIMEOUT_MS = 10_000


class SolverError(Exception):
    pass


class SpawnFailure(SolverError):
    pass


class HandshakeFailure(SolverError):
    pass


class ProtocolError(SolverError):
    def __init__(self, message: str, raw: str = ""):
        super().__init__(f"{message}: {raw!r}" if raw else message)
        self.raw = raw


class DuplicateLabel(SolverError):
    pass


class Verdict(enum.Enum):
    SAT = "sat"
    UNSAT = "unsat"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class SolverConfig:
    command: tuple[str, ...] = DEFAULT_COMMAND
    per_query_timeout: int = DEFAULT_TIMEOUT_MS
    produce_models: bool = True
    produce_unsat_cores: bool = True
    fresh_per_query: bool = False

    def __post_init__(self):
        if isinstance(self.command, str):
            object.__setattr__(self, "command", tuple(shlex.split(self.command)))
        else:
            object.__setattr__(self, "command", tuple(self.command))
        if not self.command:
            raise ValueError("solver command must be non-empty")
        if self.per_query_timeout <= 0:
            raise ValueError("per_query_timeout must be positive")


@dataclass(frozen=True)
class CheckResult:
    verdict: Verdict
    model: Optional[dict] = None
    unsat_core: Optional[frozenset[str]] = None
    reason: Optional[str] = None
    wall_time_ms: float = field(default=0.0, compare=False)

    @property
    def sat(self) -> bool:
        return self.verdict is Verdict.SAT

    @property
    def unsat(self) -> bool:
        return self.verdict is Verdict.UNSAT

    @property
    def unknown(self) -> bool:
        return self.verdict is Verdict.UNKNOWN


# Observers see every check together with the labeled assertions it ran
# against; the test suite uses this to re-verify witnesses and cores.
CheckObserver = Callable[[Schema, dict, CheckResult], None]
_observers: list[CheckObserver] = []


def add_check_observer(fn: CheckObserver) -> None:
    _observers.append(fn)


def remove_check_observer(fn: CheckObserver) -> None:
    _observers.remove(fn)


_sync_ids = itertools.count()


class Session:
    """A live solver process with the schema declared and a labeled assertion stack."""

    def __init__(self, config: SolverConfig, schema: Schema):
        self.config = config
        self.schema = schema
        self.stderr: list[str] = []
        self._scopes: list[dict[str, Term]] = [{}]
        self._proc: Optional[subprocess.Popen] = None
        self._lines: "queue.Queue[Optional[str]]" = queue.Queue()
        self._start()

    # -- process management -------------------------------------------------

    def _start(self) -> None:
        try:
            self._proc = subprocess.Popen(
                list(self.config.command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise SpawnFailure(f"cannot start {self.config.command[0]!r}: {exc}") from exc
        self._lines = queue.Queue()
        threading.Thread(target=self._pump, args=(self._proc.stdout, self._lines), daemon=True).start()
        threading.Thread(target=self._drain_stderr, args=(self._proc.stderr,), daemon=True).start()
        self._scopes = [{}]
        try:
            out = self._exchange(self._preamble())
        except (ProtocolError, TimeoutError) as exc:
            self._kill()
            raise HandshakeFailure(str(exc)) from exc
        if _errors(out):
            self._kill()
            raise HandshakeFailure("solver rejected setup: " + "; ".join(_errors(out)))

    def _preamble(self) -> list[str]:
        head = ["(set-option :print-success false)"]
        if self.config.produce_models:
            head.append("(set-option :produce-models true)")
        if self.config.produce_unsat_cores:
            head.append("(set-option :produce-unsat-cores true)")
        head.append("(set-logic QF_LRA)")
        head.extend(f"(declare-const {v.name} {v.sort.value})" for v in self.schema)
        return head

    def reset(self) -> None:
        """Clear all solver state, keeping the process.

        Models and cores then depend only on what is asserted afterwards,
        not on the queries this process answered before.
        """
        self._command(["(reset)", *self._preamble()])
        self._scopes = [{}]

    @staticmethod
    def _pump(stream, sink) -> None:
        for line in stream:
            sink.put(line.rstrip("\n"))
        sink.put(None)

    def _drain_stderr(self, stream) -> None:
        for line in stream:
            self.stderr.append(line.rstrip("\n"))

    def _kill(self) -> None:
        if self._proc is not None:
            with contextlib.suppress(OSError):
                self._proc.kill()
            with contextlib.suppress(Exception):
                self._proc.wait(timeout=5)
            for stream in (self._proc.stdin, self._proc.stdout, self._proc.stderr):
                with contextlib.suppress(Exception):
                    stream.close()
            self._proc = None

    def close(self) -> None:
        if self._proc is not None:
            with contextlib.suppress(OSError, ValueError):
                self._proc.stdin.write("(exit)\n")
                self._proc.stdin.flush()
            self._kill()

    def __enter__(self) -> "Session":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    @property
    def alive(self) -> bool:
        return self._proc is not None and self._proc.poll() is None

    def recycle(self) -> None:
        """Replace the process with a fresh one; the assertion stack is dropped."""
        self._kill()
        self._start()

    # -- raw protocol -------------------------------------------------------

    def _exchange(self, commands: Sequence[str], timeout_ms: Optional[float] = None) -> str:
        if self._proc is None:
            raise ProtocolError("session is closed")
        token = f"reqsmith-sync-{next(_sync_ids)}"
        payload = "\n".join([*commands, f'(echo "{token}")']) + "\n"
        try:
            self._proc.stdin.write(payload)
            self._proc.stdin.flush()
        except (OSError, ValueError) as exc:
            raise ProtocolError(f"write to solver failed: {exc}") from exc
        budget = (timeout_ms if timeout_ms is not None else self.config.per_query_timeout) / 1000
        deadline = time.monotonic() + budget
        lines: list[str] = []
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TimeoutError
            try:
                line = self._lines.get(timeout=remaining)
            except queue.Empty:
                raise TimeoutError from None
            if line is None:
                raise ProtocolError("solver exited unexpectedly", "\n".join(lines + self.stderr[-5:]))
            if line.strip() == token or line.strip() == f'"{token}"':
                return "\n".join(lines)
            lines.append(line)

    def _command(self, commands: Sequence[str]) -> str:
        try:
            out = self._exchange(commands)
        except TimeoutError:
            self.recycle()
            raise ProtocolError("solver did not answer a non-check command in time") from None
        errs = _errors(out)
        if errs:
            raise ProtocolError("solver reported an error", "; ".join(errs))
        return out

    # -- assertion stack ----------------------------------------------------

    @property
    def depth(self) -> int:
        return len(self._scopes) - 1

    def assertions(self) -> dict[str, Term]:
        out: dict[str, Term] = {}
        for scope in self._scopes:
            out.update(scope)
        return out

    def assert_named(self, label: str, t: Term) -> None:
        self.assert_many([(label, t)])

    def assert_many(self, items: Iterable[tuple[str, Term]]) -> None:
        items = list(items)
        current = self.assertions()
        cmds = []
        for label, t in items:
            if not is_simple_symbol(label):
                raise ValueError(f"invalid assertion label {label!r}")
            if label in current or label in self.schema:
                raise DuplicateLabel(label)
            self.schema.check_closed(t)
            current[label] = t
            cmds.append(f"(assert (! {print_term(t)} :named {label}))")
        if cmds:
            self._command(cmds)
        for label, t in items:
            self._scopes[-1][label] = t

    def push(self) -> None:
        self._command(["(push 1)"])
        self._scopes.append({})

    def pop(self) -> None:
        if self.depth == 0:
            raise SolverError("pop on an empty scope stack")
        self._scopes.pop()
        self._command(["(pop 1)"])

    @contextlib.contextmanager
    def scope(self, extra: Iterable[tuple[str, Term]] = ()) -> Iterator["Session"]:
        """Push a scope, assert *extra*, and restore the stack depth on exit."""
        depth = self.depth
        self.push()
        try:
            self.assert_many(extra)
            yield self
        finally:
            if self._proc is None or self.depth <= depth:
                # process was recycled mid-scope; nothing left to pop
                pass
            else:
                while self.depth > depth:
                    self.pop()

    def scoped(self, extra: Iterable[tuple[str, Term]] = ()) -> CheckResult:
        """Check satisfiability of the current stack plus *extra* without keeping *extra*."""
        with self.scope(extra):
            return self.check()

    # -- checking -----------------------------------------------------------

    def check(self) -> CheckResult:
        active = self.assertions()
        start = time.monotonic()
        try:
            out = self._exchange(["(check-sat)"])
        except TimeoutError:
            elapsed = (time.monotonic() - start) * 1000
            log.warning("solver timed out after %.0f ms; recycling session", elapsed)
            self.recycle()
            result = CheckResult(Verdict.UNKNOWN, reason="timeout", wall_time_ms=elapsed)
            self._notify(active, result)
            return result
        elapsed = (time.monotonic() - start) * 1000
        word = out.strip()
        if word == "sat":
            model = self._model() if self.config.produce_models else None
            result = CheckResult(Verdict.SAT, model=model, wall_time_ms=elapsed)
        elif word == "unsat":
            core = self._core() if self.config.produce_unsat_cores else None
            result = CheckResult(Verdict.UNSAT, unsat_core=core, wall_time_ms=elapsed)
        elif word == "unknown":
            result = CheckResult(Verdict.UNKNOWN, reason=self._reason_unknown(), wall_time_ms=elapsed)
        else:
            raise ProtocolError("unexpected check-sat response", out)
        self._notify(active, result)
        return result

    def _notify(self, active: dict, result: CheckResult) -> None:
        for fn in list(_observers):
            fn(self.schema, active, result)

    def _model(self) -> dict:
        raw = self._command(["(get-model)"])
        try:
            return parse_model(raw, self.schema)
        except (FormulaError, ValueError) as exc:
            raise ProtocolError(f"cannot parse model ({exc})", raw) from exc

    def _core(self) -> frozenset[str]:
        raw = self._command(["(get-unsat-core)"])
        try:
            nodes = read_sexprs(raw)
        except FormulaError as exc:
            raise ProtocolError("cannot parse unsat core", raw) from exc
        if len(nodes) != 1 or nodes[0].is_atom or not all(n.is_atom for n in nodes[0].value):
            raise ProtocolError("cannot parse unsat core", raw)
        return frozenset(n.value for n in nodes[0].value)

    def _reason_unknown(self) -> str:
        try:
            raw = self._command(["(get-info :reason-unknown)"])
        except ProtocolError:
            return "solver-reported"
        text = raw.strip().strip("()").replace(":reason-unknown", "").strip().strip('"')
        return text or "solver-reported"


def _errors(out: str) -> list[str]:
    return [line.strip() for line in out.splitlines() if line.strip().startswith("(error")]


def parse_model(raw: str, schema: Schema) -> dict:
    """Parse a ``get-model`` response into a total assignment over *schema*.

    Entries for names outside the schema (assertion labels, auxiliary
    definitions) are ignored; schema variables the solver left out get
    sort defaults.
    """
    nodes = read_sexprs(raw)
    if len(nodes) != 1 or nodes[0].is_atom:
        raise ValueError("model is not a single list")
    entries = nodes[0].value
    if entries and entries[0].is_atom and entries[0].value == "model":
        entries = entries[1:]
    values: dict = {}
    for entry in entries:
        if entry.is_atom or len(entry.value) != 5:
            continue
        head, name, params, _sort, body = entry.value
        if head.value != "define-fun" or not name.is_atom or name.value not in schema:
            continue
        if not params.is_atom and params.value:
            continue
        value = parse_value(_render(body))
        expected = schema.sort(name.value)
        if (expected is Sort.BOOL) != isinstance(value, bool):
            raise ValueError(f"model value for {name.value} has the wrong sort")
        values[name.value] = value
    return schema.complete(values)


def _render(e: SExpr) -> str:
    if e.is_atom:
        return e.value
    return "(" + " ".join(_render(c) for c in e.value) + ")"


def open_session(config: SolverConfig, schema: Schema) -> Session:
    return Session(config, schema)


class SessionPool:
    """Bounded pool of sessions sharing one config and schema.

    ``lease()`` hands out a session exclusively; at most ``size`` sessions
    exist at once.  With ``fresh_per_query`` every lease gets a new process.
    """

    def __init__(self, config: SolverConfig, schema: Schema, size: int = 4):
        if size < 1:
            raise ValueError("pool size must be at least 1")
        self.config = config
        self.schema = schema
        self.size = size
        self._idle: "queue.LifoQueue[Session]" = queue.LifoQueue()
        self._slots = threading.BoundedSemaphore(size)
        self._all: list[Session] = []
        self._lock = threading.Lock()

    @contextlib.contextmanager
    def lease(self) -> Iterator[Session]:
        self._slots.acquire()
        session = None
        try:
            if not self.config.fresh_per_query:
                with contextlib.suppress(queue.Empty):
                    session = self._idle.get_nowait()
            if session is None or not session.alive:
                session = Session(self.config, self.schema)
                with self._lock:
                    self._all.append(session)
            depth = session.depth
            yield session
            if session.alive and session.depth != depth:
                session.recycle()
        finally:
            if session is not None:
                if self.config.fresh_per_query or not session.alive:
                    session.close()
                else:
                    self._idle.put(session)
            self._slots.release()

    def check(self, extra: Iterable[tuple[str, Term]]) -> CheckResult:
        """Convenience: lease a session and check *extra* in a fresh scope."""
        with self.lease() as s:
            if s.depth == 0 and not s.assertions():
                s.reset()
            return s.scoped(extra)

    def close(self) -> None:
        with self._lock:
            for s in self._all:
                s.close()
            self._all.clear()
        while not self._idle.empty():
            self._idle.get_nowait()

    def __enter__(self) -> "SessionPool":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
