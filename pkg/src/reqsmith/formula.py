"""Term language for quantifier-free Boolean + linear real arithmetic formulas.

Terms are immutable dataclasses.  ``parse_term`` reads the SMT-LIB2 subset
used throughout the package and ``print_term`` writes the single canonical
form; ``parse_term(print_term(t)) == t`` for every canonical term.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator, Mapping, Union

Value = Union[bool, Fraction]
Assignment = Mapping[str, Value]


class Sort(enum.Enum):
    BOOL = "Bool"
    REAL = "Real"


class FormulaError(Exception):
    """Base class for term construction and parsing errors."""


class SmtSyntaxError(FormulaError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UnknownSymbol(FormulaError):
    def __init__(self, name: str):
        super().__init__(f"unknown symbol {name!r}")
        self.name = name


class SortError(FormulaError):
    pass


class NonLinear(FormulaError):
    pass


class UnboundVariable(FormulaError):
    def __init__(self, name: str):
        super().__init__(f"variable {name!r} has no value in the assignment")
        self.name = name


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class BoolConst:
    value: bool


@dataclass(frozen=True)
class RealConst:
    value: Fraction

    def __post_init__(self):
        if not isinstance(self.value, Fraction):
            object.__setattr__(self, "value", Fraction(self.value))


@dataclass(frozen=True)
class Var:
    name: str
    sort: Sort


@dataclass(frozen=True)
class Not:
    arg: "Term"


@dataclass(frozen=True)
class And:
    args: tuple["Term", ...]

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))
        if not self.args:
            raise FormulaError("and needs at least one operand")


@dataclass(frozen=True)
class Or:
    args: tuple["Term", ...]

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))
        if not self.args:
            raise FormulaError("or needs at least one operand")


@dataclass(frozen=True)
class Implies:
    lhs: "Term"
    rhs: "Term"


@dataclass(frozen=True)
class Iff:
    lhs: "Term"
    rhs: "Term"


@dataclass(frozen=True)
class Ite:
    cond: "Term"
    then: "Term"
    other: "Term"


CMP_OPS = ("<", "<=", ">", ">=", "=")
ARITH_OPS = ("+", "-", "*")


@dataclass(frozen=True)
class Cmp:
    op: str
    lhs: "Term"
    rhs: "Term"

    def __post_init__(self):
        if self.op not in CMP_OPS:
            raise FormulaError(f"unknown comparison {self.op!r}")


@dataclass(frozen=True)
class Arith:
    op: str
    args: tuple["Term", ...]

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))
        if self.op not in ARITH_OPS:
            raise FormulaError(f"unknown arithmetic operator {self.op!r}")
        if not self.args or (self.op != "-" and len(self.args) < 2):
            raise FormulaError(f"too few operands for {self.op!r}")
        if self.op == "*" and sum(not _is_constant(a) for a in self.args) > 1:
            raise NonLinear("product of two non-constant terms")


Term = Union[BoolConst, RealConst, Var, Not, And, Or, Implies, Iff, Ite, Cmp, Arith]

TRUE = BoolConst(True)
FALSE = BoolConst(False)


def _is_constant(t: Term) -> bool:
    if isinstance(t, RealConst):
        return True
    if isinstance(t, Arith):
        return all(_is_constant(a) for a in t.args)
    return False


def Bool(name: str) -> Var:
    return Var(name, Sort.BOOL)


def Real(name: str) -> Var:
    return Var(name, Sort.REAL)


def conj(terms: Iterable[Term]) -> Term:
    """Conjunction that collapses the empty and singleton cases."""
    terms = tuple(terms)
    if not terms:
        return TRUE
    if len(terms) == 1:
        return terms[0]
    return And(terms)


def children(t: Term) -> tuple[Term, ...]:
    if isinstance(t, (BoolConst, RealConst, Var)):
        return ()
    if isinstance(t, Not):
        return (t.arg,)
    if isinstance(t, (And, Or, Arith)):
        return t.args
    if isinstance(t, (Implies, Iff, Cmp)):
        return (t.lhs, t.rhs)
    if isinstance(t, Ite):
        return (t.cond, t.then, t.other)
    raise TypeError(f"not a term: {t!r}")


def walk(t: Term) -> Iterator[Term]:
    stack = [t]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(children(node)))


def free_vars(t: Term) -> set[str]:
    return {n.name for n in walk(t) if isinstance(n, Var)}


def sort_of(t: Term) -> Sort:
    if isinstance(t, (RealConst, Arith)):
        return Sort.REAL
    if isinstance(t, Var):
        return t.sort
    if isinstance(t, Ite):
        return sort_of(t.then)
    return Sort.BOOL


def check_sorts(t: Term) -> None:
    """Raise SortError unless *t* is well-sorted."""
    for node in walk(t):
        if isinstance(node, (Not, And, Or, Implies, Iff)):
            for c in children(node):
                if sort_of(c) is not Sort.BOOL:
                    raise SortError(f"Boolean connective applied to Real term: {print_term(c)}")
        elif isinstance(node, (Cmp, Arith)):
            for c in children(node):
                if sort_of(c) is not Sort.REAL:
                    raise SortError(f"Boolean term used in arithmetic: {print_term(c)}")
        elif isinstance(node, Ite):
            if sort_of(node.cond) is not Sort.BOOL:
                raise SortError("ite condition must be Bool")
            if sort_of(node.then) is not sort_of(node.other):
                raise SortError("ite branches have different sorts")


# ---------------------------------------------------------------------------
# Schema


_SIMPLE_SYMBOL = re.compile(r"[A-Za-z~!@$%^&*_+=<>.?/\-][A-Za-z0-9~!@$%^&*_+=<>.?/\-]*\Z")
_RESERVED = frozenset(
    {"true", "false", "and", "or", "not", "=>", "=", "ite", "distinct", "let", "par",
     "forall", "exists", "!", "_", "as", "<", "<=", ">", ">=", "+", "-", "*", "/"}
)


def is_simple_symbol(name: str) -> bool:
    return bool(_SIMPLE_SYMBOL.match(name)) and name not in _RESERVED


@dataclass(frozen=True)
class SchemaVar:
    name: str
    sort: Sort
    description: str = ""


class Schema:
    """Ordered, name-unique collection of typed state variables."""

    def __init__(self, variables: Iterable[SchemaVar] = ()):
        self.variables: tuple[SchemaVar, ...] = tuple(variables)
        self._by_name: dict[str, SchemaVar] = {}
        for v in self.variables:
            if not is_simple_symbol(v.name):
                raise FormulaError(f"invalid variable name {v.name!r}")
            if v.name in self._by_name:
                raise FormulaError(f"duplicate variable {v.name!r}")
            self._by_name[v.name] = v

    @classmethod
    def of(cls, **sorts: Sort) -> "Schema":
        return cls(SchemaVar(n, s) for n, s in sorts.items())

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def __iter__(self) -> Iterator[SchemaVar]:
        return iter(self.variables)

    def __len__(self) -> int:
        return len(self.variables)

    def __eq__(self, other) -> bool:
        return isinstance(other, Schema) and self.variables == other.variables

    def __hash__(self) -> int:
        return hash(self.variables)

    def __repr__(self) -> str:
        return f"Schema({', '.join(f'{v.name}:{v.sort.value}' for v in self.variables)})"

    def sort(self, name: str) -> Sort:
        try:
            return self._by_name[name].sort
        except KeyError:
            raise UnknownSymbol(name) from None

    def var(self, name: str) -> Var:
        return Var(name, self.sort(name))

    def default_value(self, name: str) -> Value:
        return False if self.sort(name) is Sort.BOOL else Fraction(0)

    def complete(self, assignment: Assignment) -> dict[str, Value]:
        """Fill in sort defaults (false / 0) for variables the assignment omits."""
        return {v.name: assignment.get(v.name, self.default_value(v.name)) for v in self.variables}

    def check_closed(self, t: Term) -> None:
        for node in walk(t):
            if isinstance(node, Var):
                if node.name not in self:
                    raise UnknownSymbol(node.name)
                if self.sort(node.name) is not node.sort:
                    raise SortError(f"{node.name} is declared {self.sort(node.name).value}")

    def check_assignment(self, a: Assignment) -> None:
        for name, value in a.items():
            expected = self.sort(name)
            if expected is Sort.BOOL and not isinstance(value, bool):
                raise SortError(f"{name} expects a Bool value, got {value!r}")
            if expected is Sort.REAL and (isinstance(value, bool) or not isinstance(value, (int, Fraction))):
                raise SortError(f"{name} expects a rational value, got {value!r}")


# ---------------------------------------------------------------------------
# Printing


def format_rational(q: Fraction) -> str:
    """Exact decimal text for *q*; falls back to ``(/ n.0 d.0)`` for non-terminating decimals."""
    q = Fraction(q)
    if q < 0:
        return f"(- {format_rational(-q)})"
    num, den = q.numerator, q.denominator
    d, k = den, 0
    while d % 10 == 0:
        d //= 10
        k += 1
    while d % 2 == 0:
        d //= 2
        k += 1
    while d % 5 == 0:
        d //= 5
        k += 1
    if d != 1:
        return f"(/ {num}.0 {den}.0)"
    scaled = num * 10**k // den
    if k == 0:
        return f"{scaled}.0"
    digits = str(scaled).rjust(k + 1, "0")
    whole, frac = digits[:-k], digits[-k:].rstrip("0")
    return f"{whole}.{frac or '0'}"


_CONNECTIVE = {Not: "not", And: "and", Or: "or", Implies: "=>", Iff: "=", Ite: "ite"}


def print_term(t: Term) -> str:
    if isinstance(t, BoolConst):
        return "true" if t.value else "false"
    if isinstance(t, RealConst):
        return format_rational(t.value)
    if isinstance(t, Var):
        return t.name
    if isinstance(t, Cmp):
        head = t.op
    elif isinstance(t, Arith):
        head = t.op
    else:
        head = _CONNECTIVE[type(t)]
    return f"({head} {' '.join(print_term(c) for c in children(t))})"


# ---------------------------------------------------------------------------
# Parsing


_TOKEN = re.compile(r"""\s+|;[^\n]*|(?P<tok>\(|\)|\|[^|]*\||"(?:[^"]|"")*"|[^\s()|";]+)""")


@dataclass
class SExpr:
    """Raw s-expression node: an atom string or a list, plus its byte offset."""

    value: Union[str, list["SExpr"]]
    offset: int

    @property
    def is_atom(self) -> bool:
        return isinstance(self.value, str)


def tokenize(text: str) -> list[tuple[str, int]]:
    """Split *text* into tokens paired with their byte offsets."""
    out: list[tuple[str, int]] = []
    ascii_only = text.isascii()
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        off = pos if ascii_only else len(text[:pos].encode("utf-8"))
        if m is None:
            raise SmtSyntaxError(f"unexpected character {text[pos]!r}", off)
        if m.group("tok") is not None:
            out.append((m.group("tok"), off))
        pos = m.end()
    return out


def read_sexprs(text: str) -> list[SExpr]:
    """Parse every top-level s-expression in *text*."""
    tokens = tokenize(text)
    stack: list[SExpr] = []
    top: list[SExpr] = []
    for tok, off in tokens:
        if tok == "(":
            stack.append(SExpr([], off))
        elif tok == ")":
            if not stack:
                raise SmtSyntaxError("unbalanced ')'", off)
            node = stack.pop()
            (stack[-1].value if stack else top).append(node)
        else:
            if tok.startswith("|"):
                tok = tok[1:-1]
            (stack[-1].value if stack else top).append(SExpr(tok, off))
    if stack:
        raise SmtSyntaxError("unbalanced '('", stack[-1].offset)
    return top


def read_sexpr(text: str) -> SExpr:
    nodes = read_sexprs(text)
    if not nodes:
        raise SmtSyntaxError("empty input", 0)
    if len(nodes) > 1:
        raise SmtSyntaxError("expected a single s-expression", nodes[1].offset)
    return nodes[0]


_NUMERAL = re.compile(r"(?:0|[1-9][0-9]*)(?:\.[0-9]+)?\Z")


class _Parser:
    def __init__(self, schema: Schema, definitions: Mapping[str, Term] | None = None):
        self.schema = schema
        self.definitions = dict(definitions or {})

    def term(self, e: SExpr, env: Mapping[str, Term]) -> Term:
        if e.is_atom:
            return self.atom(e, env)
        items = e.value
        if not items:
            raise SmtSyntaxError("empty application", e.offset)
        head = items[0]
        if not head.is_atom:
            raise SmtSyntaxError("operator must be a symbol", head.offset)
        op, args = head.value, items[1:]
        if op == "let":
            return self.let(e, args, env)
        if op == "!":
            if not args:
                raise SmtSyntaxError("empty annotation", e.offset)
            return self.term(args[0], env)
        sub = [self.term(a, env) for a in args]
        try:
            return self.apply(op, sub, e)
        except (SortError, NonLinear, UnknownSymbol, SmtSyntaxError):
            raise
        except FormulaError as exc:
            raise SmtSyntaxError(str(exc), e.offset) from None

    def atom(self, e: SExpr, env: Mapping[str, Term]) -> Term:
        tok = e.value
        if tok == "true":
            return TRUE
        if tok == "false":
            return FALSE
        if _NUMERAL.match(tok):
            return RealConst(Fraction(tok))
        if tok in env:
            return env[tok]
        if tok in self.definitions:
            return self.definitions[tok]
        if tok[0].isdigit() or tok.startswith('"'):
            raise SmtSyntaxError(f"malformed literal {tok!r}", e.offset)
        if tok not in self.schema:
            raise UnknownSymbol(tok)
        return self.schema.var(tok)

    def let(self, e: SExpr, args: list[SExpr], env: Mapping[str, Term]) -> Term:
        if len(args) != 2 or args[0].is_atom:
            raise SmtSyntaxError("malformed let", e.offset)
        scope = dict(env)
        bound = {}
        for binding in args[0].value:
            if binding.is_atom or len(binding.value) != 2 or not binding.value[0].is_atom:
                raise SmtSyntaxError("malformed let binding", binding.offset)
            bound[binding.value[0].value] = self.term(binding.value[1], env)
        scope.update(bound)
        return self.term(args[1], scope)

    def apply(self, op: str, a: list[Term], e: SExpr) -> Term:
        n = len(a)
        if op == "not":
            self.arity(op, n, 1, e)
            return Not(self.boolean(a[0]))
        if op in ("and", "or"):
            if n == 0:
                raise SmtSyntaxError(f"{op} needs at least one operand", e.offset)
            args = tuple(self.boolean(x) for x in a)
            return And(args) if op == "and" else Or(args)
        if op == "=>":
            if n < 2:
                raise SmtSyntaxError("=> needs two operands", e.offset)
            args = [self.boolean(x) for x in a]
            out = args[-1]
            for lhs in reversed(args[:-1]):
                out = Implies(lhs, out)
            return out
        if op == "ite":
            self.arity(op, n, 3, e)
            cond = self.boolean(a[0])
            if sort_of(a[1]) is not sort_of(a[2]):
                raise SortError("ite branches have different sorts")
            return Ite(cond, a[1], a[2])
        if op in ("=", "distinct"):
            if n < 2:
                raise SmtSyntaxError(f"{op} needs two operands", e.offset)
            sorts = {sort_of(x) for x in a}
            if len(sorts) != 1:
                raise SortError(f"{op} applied to mixed sorts")
            make = Iff if sorts == {Sort.BOOL} else (lambda l, r: Cmp("=", l, r))
            if op == "=":
                pairs = [make(a[i], a[i + 1]) for i in range(n - 1)]
            else:
                pairs = [Not(make(a[i], a[j])) for i in range(n) for j in range(i + 1, n)]
            return pairs[0] if len(pairs) == 1 else And(tuple(pairs))
        if op in ("<", "<=", ">", ">="):
            if n < 2:
                raise SmtSyntaxError(f"{op} needs two operands", e.offset)
            args = [self.real(x) for x in a]
            pairs = [Cmp(op, args[i], args[i + 1]) for i in range(n - 1)]
            return pairs[0] if len(pairs) == 1 else And(tuple(pairs))
        if op in ("+", "-", "*"):
            args = tuple(self.real(x) for x in a)
            if op == "-" and n == 1 and isinstance(args[0], RealConst):
                return RealConst(-args[0].value)
            return Arith(op, args)
        if op == "/":
            self.arity(op, n, 2, e)
            num, den = (self.real(x) for x in a)
            if not isinstance(den, RealConst):
                raise NonLinear("division by a non-constant term")
            if den.value == 0:
                raise SmtSyntaxError("division by zero", e.offset)
            if isinstance(num, RealConst):
                return RealConst(num.value / den.value)
            return Arith("*", (RealConst(1 / den.value), num))
        if op == "to_real":
            self.arity(op, n, 1, e)
            return self.real(a[0])
        if op in self.schema:
            raise SortError(f"{op} is a variable, not a function")
        raise UnknownSymbol(op)

    @staticmethod
    def arity(op: str, n: int, want: int, e: SExpr) -> None:
        if n != want:
            raise SmtSyntaxError(f"{op} expects {want} operand(s), got {n}", e.offset)

    @staticmethod
    def boolean(t: Term) -> Term:
        if sort_of(t) is not Sort.BOOL:
            raise SortError(f"expected a Bool term, got {print_term(t)}")
        return t

    @staticmethod
    def real(t: Term) -> Term:
        if sort_of(t) is not Sort.REAL:
            raise SortError(f"expected a Real term, got {print_term(t)}")
        return t


def parse_sexpr(e: SExpr, schema: Schema, definitions: Mapping[str, Term] | None = None) -> Term:
    return _Parser(schema, definitions).term(e, {})


def parse_term(text: str, schema: Schema) -> Term:
    """Parse a single SMT-LIB2 term whose free symbols are declared in *schema*."""
    return parse_sexpr(read_sexpr(text), schema)


def parse_value(text: str) -> Value:
    """Parse a ground constant as printed in solver models."""
    t = parse_term(text, Schema())
    return evaluate(t, {})


# ---------------------------------------------------------------------------
# Evaluation


def evaluate(t: Term, a: Assignment) -> Value:
    """Evaluate *t* under *a* with exact rational arithmetic."""
    if isinstance(t, BoolConst):
        return t.value
    if isinstance(t, RealConst):
        return t.value
    if isinstance(t, Var):
        try:
            v = a[t.name]
        except KeyError:
            raise UnboundVariable(t.name) from None
        return v if isinstance(v, bool) else Fraction(v)
    if isinstance(t, Not):
        return not evaluate(t.arg, a)
    if isinstance(t, And):
        return all(evaluate(x, a) for x in t.args)
    if isinstance(t, Or):
        return any(evaluate(x, a) for x in t.args)
    if isinstance(t, Implies):
        return (not evaluate(t.lhs, a)) or bool(evaluate(t.rhs, a))
    if isinstance(t, Iff):
        return evaluate(t.lhs, a) == evaluate(t.rhs, a)
    if isinstance(t, Ite):
        return evaluate(t.then, a) if evaluate(t.cond, a) else evaluate(t.other, a)
    if isinstance(t, Cmp):
        lhs, rhs = evaluate(t.lhs, a), evaluate(t.rhs, a)
        if t.op == "<":
            return lhs < rhs
        if t.op == "<=":
            return lhs <= rhs
        if t.op == ">":
            return lhs > rhs
        if t.op == ">=":
            return lhs >= rhs
        return lhs == rhs
    if isinstance(t, Arith):
        vals = [evaluate(x, a) for x in t.args]
        if t.op == "+":
            return sum(vals, Fraction(0))
        if t.op == "-":
            if len(vals) == 1:
                return -vals[0]
            out = vals[0]
            for v in vals[1:]:
                out -= v
            return out
        out = Fraction(1)
        for v in vals:
            out *= v
        return out
    raise TypeError(f"not a term: {t!r}")


def literal(var: Var, value: Value) -> Term:
    """The term pinning *var* to *value*."""
    if var.sort is Sort.BOOL:
        return var if value else Not(var)
    return Cmp("=", var, RealConst(value))


def format_value(v: Value) -> str:
    """Human-readable value: ``true``, ``200``, ``22.5``, or ``1/3`` when no finite decimal exists."""
    if isinstance(v, bool):
        return "true" if v else "false"
    q = Fraction(v)
    d, twos, fives = q.denominator, 0, 0
    while d % 2 == 0:
        d, twos = d // 2, twos + 1
    while d % 5 == 0:
        d, fives = d // 5, fives + 1
    if d != 1:
        return str(q)
    k = max(twos, fives)
    if k == 0:
        return str(q.numerator)
    scaled = abs(q.numerator) * 10**k // q.denominator
    digits = str(scaled).rjust(k + 1, "0")
    return f"{'-' if q < 0 else ''}{digits[:-k]}.{digits[-k:]}"
