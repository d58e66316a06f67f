"""Invariant expression language: parser, canonical printer, evaluator.

One invariant constrains the joined groups of a single focal entity:

    INVARIANT refund_paid ON refundOrder CATEGORY database
    WHERE EXISTS(orders: orders.status == "paid")

Quantifiers range over the rows a relationship bound into the group; any
reference to a non-focal entity must sit inside a quantifier binding it.
Evaluation is two-valued: comparisons touching null are false (only
IS [NOT] NULL sees null), and type-incompatible comparisons are false.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Any, Iterable

from .errors import DslScopeError, DslSyntaxError, EvaluationError
from .values import values_equal

CATEGORIES = ("common_sense", "format", "database", "environment", "related_api")

KEYWORDS = {
    "INVARIANT",
    "ON",
    "CATEGORY",
    "WHERE",
    "EXISTS",
    "FORALL",
    "NOT",
    "AND",
    "OR",
    "TRUE",
    "FALSE",
    "IN",
    "MATCHES",
    "IS",
    "NULL",
}

CMP_OPS = ("==", "!=", "<=", ">=", "<", ">")


# --- AST -------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Lit:
    value: Any  # str | int | float | bool


@dataclass(frozen=True, slots=True)
class FieldRef:
    root: str
    path: str


@dataclass(frozen=True, slots=True)
class BoolConst:
    value: bool


@dataclass(frozen=True, slots=True)
class Not:
    expr: Any


@dataclass(frozen=True, slots=True)
class And:
    parts: tuple


@dataclass(frozen=True, slots=True)
class Or:
    parts: tuple


@dataclass(frozen=True, slots=True)
class Quant:
    exists: bool
    name: str
    body: Any


@dataclass(frozen=True, slots=True)
class Cmp:
    op: str
    left: Any
    right: Any


@dataclass(frozen=True, slots=True)
class InSet:
    operand: Any
    items: tuple


@dataclass(frozen=True, slots=True)
class Match:
    operand: Any
    pattern: str


@dataclass(frozen=True, slots=True)
class NullCheck:
    operand: Any
    negated: bool


@dataclass(frozen=True)
class Invariant:
    id: str
    focal: str
    category: str
    body: Any


# --- tokenizer -------------------------------------------------------------

_DSL_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>\#[^\n]*)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<number>-?[0-9]+(?:\.[0-9]+)?(?:[eE][+-]?[0-9]+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>==|!=|<=|>=|<|>)
  | (?P<punct>[()\[\],.:])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str  # STRING NUMBER IDENT KW OP PUNCT
    text: str
    line: int
    column: int


def _tokenize(text: str) -> list[_Tok]:
    tokens: list[_Tok] = []
    pos = 0
    line = 1
    line_start = 0
    while pos < len(text):
        match = _DSL_TOKEN_RE.match(text, pos)
        if match is None:
            raise DslSyntaxError(
                f"unexpected character {text[pos]!r}", line, pos - line_start + 1
            )
        kind = match.lastgroup or ""
        raw = match.group(0)
        column = pos - line_start + 1
        if kind == "ident":
            tokens.append(_Tok("KW" if raw in KEYWORDS else "IDENT", raw, line, column))
        elif kind == "string":
            tokens.append(_Tok("STRING", raw, line, column))
        elif kind == "number":
            tokens.append(_Tok("NUMBER", raw, line, column))
        elif kind == "op":
            tokens.append(_Tok("OP", raw, line, column))
        elif kind == "punct":
            tokens.append(_Tok("PUNCT", raw, line, column))
        newlines = raw.count("\n")
        if newlines:
            line += newlines
            line_start = pos + raw.rfind("\n") + 1
        pos = match.end()
    return tokens


_BACKREF_RE = re.compile(r"\\[1-9]")


def _check_pattern(pattern: str, tok: _Tok) -> None:
    if _BACKREF_RE.search(pattern):
        raise DslSyntaxError("backreferences are not supported", tok.line, tok.column)
    try:
        re.compile(pattern)
    except re.error as exc:
        raise DslSyntaxError(f"bad pattern: {exc}", tok.line, tok.column)


# --- parser ----------------------------------------------------------------


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    def _error(self, message: str) -> DslSyntaxError:
        if self.pos < len(self.tokens):
            tok = self.tokens[self.pos]
            return DslSyntaxError(f"{message}, got {tok.text!r}", tok.line, tok.column)
        if self.tokens:
            last = self.tokens[-1]
            return DslSyntaxError(message, last.line, last.column + len(last.text))
        return DslSyntaxError(message, 1, 1)

    def peek(self) -> _Tok | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def at_kw(self, word: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.kind == "KW" and tok.text == word

    def take_kw(self, word: str) -> None:
        if not self.at_kw(word):
            raise self._error(f"expected {word}")
        self.pos += 1

    def try_kw(self, word: str) -> bool:
        if self.at_kw(word):
            self.pos += 1
            return True
        return False

    def at_punct(self, text: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.kind == "PUNCT" and tok.text == text

    def take_punct(self, text: str) -> None:
        if not self.at_punct(text):
            raise self._error(f"expected {text!r}")
        self.pos += 1

    def try_punct(self, text: str) -> bool:
        if self.at_punct(text):
            self.pos += 1
            return True
        return False

    def ident(self) -> str:
        tok = self.peek()
        if tok is None or tok.kind != "IDENT":
            raise self._error("expected identifier")
        self.pos += 1
        return tok.text

    def parse_invariants(self) -> list[Invariant]:
        out = [self.parse_one()]
        while self.peek() is not None:
            out.append(self.parse_one())
        return out

    def parse_one(self) -> Invariant:
        self.take_kw("INVARIANT")
        name = self.ident()
        self.take_kw("ON")
        focal = self.ident()
        self.take_kw("CATEGORY")
        category = self.ident()
        if category not in CATEGORIES:
            raise self._error(
                f"category must be one of {', '.join(CATEGORIES)}; got {category!r}"
            )
        self.take_kw("WHERE")
        body = self.parse_expr()
        inv = Invariant(id=name, focal=focal, category=category, body=body)
        _check_scope(inv.body, focal, frozenset())
        return inv

    def parse_expr(self) -> Any:
        parts = [self.parse_andx()]
        while self.try_kw("OR"):
            parts.append(self.parse_andx())
        return parts[0] if len(parts) == 1 else Or(tuple(parts))

    def parse_andx(self) -> Any:
        parts = [self.parse_notx()]
        while self.try_kw("AND"):
            parts.append(self.parse_notx())
        return parts[0] if len(parts) == 1 else And(tuple(parts))

    def parse_notx(self) -> Any:
        if self.try_kw("NOT"):
            return Not(self.parse_notx())
        return self.parse_atom()

    def parse_atom(self) -> Any:
        if self.try_punct("("):
            inner = self.parse_expr()
            self.take_punct(")")
            return inner
        tok = self.peek()
        if tok is None:
            raise self._error("expected expression")
        if tok.kind == "KW" and tok.text in ("TRUE", "FALSE"):
            # Boolean literals double as predicate operands: look ahead.
            nxt = self.tokens[self.pos + 1] if self.pos + 1 < len(self.tokens) else None
            if nxt is not None and (
                nxt.kind == "OP" or (nxt.kind == "KW" and nxt.text in ("IN", "MATCHES", "IS"))
            ):
                return self.parse_pred()
            self.pos += 1
            return BoolConst(tok.text == "TRUE")
        if tok.kind == "KW" and tok.text in ("EXISTS", "FORALL"):
            self.pos += 1
            self.take_punct("(")
            name = self.ident()
            self.take_punct(":")
            body = self.parse_expr()
            self.take_punct(")")
            return Quant(exists=tok.text == "EXISTS", name=name, body=body)
        return self.parse_pred()

    def parse_pred(self) -> Any:
        operand = self.parse_operand()
        tok = self.peek()
        if tok is not None and tok.kind == "OP":
            self.pos += 1
            right = self.parse_operand()
            return Cmp(op=tok.text, left=operand, right=right)
        if self.try_kw("IN"):
            self.take_punct("[")
            items = [self.parse_literal()]
            while self.try_punct(","):
                items.append(self.parse_literal())
            self.take_punct("]")
            return InSet(operand=operand, items=tuple(items))
        if self.try_kw("MATCHES"):
            tok = self.peek()
            if tok is None or tok.kind != "STRING":
                raise self._error("expected pattern string")
            self.pos += 1
            pattern = json.loads(tok.text)
            _check_pattern(pattern, tok)
            return Match(operand=operand, pattern=pattern)
        if self.try_kw("IS"):
            negated = self.try_kw("NOT")
            self.take_kw("NULL")
            return NullCheck(operand=operand, negated=negated)
        raise self._error("expected comparison, IN, MATCHES, or IS")

    def parse_operand(self) -> Any:
        tok = self.peek()
        if tok is None:
            raise self._error("expected operand")
        if tok.kind == "IDENT":
            self.pos += 1
            if not self.try_punct("."):
                raise DslSyntaxError(
                    "field reference requires an entity-qualified path",
                    tok.line,
                    tok.column,
                )
            segments = [self.ident()]
            while self.try_punct("."):
                segments.append(self.ident())
            return FieldRef(root=tok.text, path=".".join(segments))
        return self.parse_literal()

    def parse_literal(self) -> Lit:
        tok = self.peek()
        if tok is None:
            raise self._error("expected literal")
        if tok.kind == "STRING":
            self.pos += 1
            return Lit(json.loads(tok.text))
        if tok.kind == "NUMBER":
            self.pos += 1
            if re.fullmatch(r"-?[0-9]+", tok.text):
                return Lit(int(tok.text))
            return Lit(float(tok.text))
        if tok.kind == "KW" and tok.text in ("TRUE", "FALSE"):
            self.pos += 1
            return Lit(tok.text == "TRUE")
        raise self._error("expected literal")


def _refs_of(operand: Any) -> Iterable[FieldRef]:
    if isinstance(operand, FieldRef):
        yield operand


def _check_scope(node: Any, focal: str, bound: frozenset) -> None:
    if isinstance(node, (Cmp, InSet, Match, NullCheck)):
        operands = (
            (node.left, node.right) if isinstance(node, Cmp) else (node.operand,)
        )
        for operand in operands:
            for ref in _refs_of(operand):
                if ref.root != focal and ref.root not in bound:
                    raise DslScopeError(
                        f"reference to {ref.root}.{ref.path} is outside any "
                        f"quantifier binding {ref.root!r}"
                    )
    elif isinstance(node, Not):
        _check_scope(node.expr, focal, bound)
    elif isinstance(node, (And, Or)):
        for part in node.parts:
            _check_scope(part, focal, bound)
    elif isinstance(node, Quant):
        _check_scope(node.body, focal, bound | {node.name})


def quantified_names(node: Any) -> set[str]:
    """Every binding name an expression quantifies over, at any depth."""
    if isinstance(node, Quant):
        return {node.name} | quantified_names(node.body)
    if isinstance(node, (And, Or)):
        names: set[str] = set()
        for part in node.parts:
            names |= quantified_names(part)
        return names
    if isinstance(node, Not):
        return quantified_names(node.expr)
    return set()


def parse_invariant(text: str) -> Invariant:
    parser = _Parser(text)
    inv = parser.parse_one()
    if parser.peek() is not None:
        raise parser._error("trailing input after invariant")
    return inv


def parse_invariants(text: str) -> list[Invariant]:
    parser = _Parser(text)
    if parser.peek() is None:
        return []
    return parser.parse_invariants()


# --- canonical printer -----------------------------------------------------


def format_literal(value: Any) -> str:
    if isinstance(value, bool):
        return "TRUE" if value else "FALSE"
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, int):
        return str(value)
    return repr(value)


def print_operand(operand: Any) -> str:
    if isinstance(operand, FieldRef):
        return f"{operand.root}.{operand.path}"
    return format_literal(operand.value)


def print_expr(node: Any) -> str:
    if isinstance(node, BoolConst):
        return "TRUE" if node.value else "FALSE"
    if isinstance(node, Not):
        return f"NOT ({print_expr(node.expr)})"
    if isinstance(node, And):
        return " AND ".join(_wrap_junct(p) for p in node.parts)
    if isinstance(node, Or):
        return " OR ".join(_wrap_junct(p) for p in node.parts)
    if isinstance(node, Quant):
        word = "EXISTS" if node.exists else "FORALL"
        return f"{word}({node.name}: {print_expr(node.body)})"
    if isinstance(node, Cmp):
        return f"{print_operand(node.left)} {node.op} {print_operand(node.right)}"
    if isinstance(node, InSet):
        items = ", ".join(format_literal(item.value) for item in node.items)
        return f"{print_operand(node.operand)} IN [{items}]"
    if isinstance(node, Match):
        return f"{print_operand(node.operand)} MATCHES {json.dumps(node.pattern)}"
    if isinstance(node, NullCheck):
        tail = "IS NOT NULL" if node.negated else "IS NULL"
        return f"{print_operand(node.operand)} {tail}"
    raise TypeError(f"not an expression node: {node!r}")


def _wrap_junct(node: Any) -> str:
    text = print_expr(node)
    if isinstance(node, (And, Or)):
        return f"({text})"
    return text


def print_invariant(inv: Invariant) -> str:
    return (
        f"INVARIANT {inv.id} ON {inv.focal} CATEGORY {inv.category} "
        f"WHERE {print_expr(inv.body)}"
    )


def write_invariant_file(invariants: Iterable[Invariant], path: str) -> None:
    from .fileio import write_text

    blocks = [print_invariant(inv) for inv in invariants]
    write_text("\n\n".join(blocks) + ("\n" if blocks else ""), path)


def read_invariant_file(path: str) -> list[Invariant]:
    with open(path, encoding="utf-8") as fh:
        return parse_invariants(fh.read())


# --- evaluation ------------------------------------------------------------


@dataclass(frozen=True)
class TraceNode:
    label: str
    combiner: str = "leaf"  # leaf | and | or
    children: tuple = ()


@dataclass(frozen=True)
class Verdict:
    passed: bool
    trace: TraceNode | None


_PATTERN_CACHE: dict[str, re.Pattern] = {}


def _compiled(pattern: str) -> re.Pattern:
    compiled = _PATTERN_CACHE.get(pattern)
    if compiled is None:
        compiled = re.compile(pattern)
        _PATTERN_CACHE[pattern] = compiled
    return compiled


def _resolve(operand: Any, scope: dict) -> Any:
    if isinstance(operand, FieldRef):
        row = scope.get(operand.root)
        if row is None:
            raise EvaluationError(
                f"entity {operand.root!r} is not bound in this group"
            )
        return row.get(operand.path)
    return operand.value


def _cmp_values(op: str, a: Any, b: Any) -> bool:
    if a is None or b is None:
        return False
    a_bool = isinstance(a, bool)
    b_bool = isinstance(b, bool)
    if a_bool or b_bool:
        if not (a_bool and b_bool) or op not in ("==", "!="):
            return False
        return (a is b) if op == "==" else (a is not b)
    a_num = isinstance(a, (int, float))
    b_num = isinstance(b, (int, float))
    if a_num != b_num:
        return False
    if not a_num and not (isinstance(a, str) and isinstance(b, str)):
        return False
    if op == "==":
        return a == b
    if op == "!=":
        return a != b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    return a >= b


def _eval(node: Any, scope: dict, bindings: dict) -> bool:
    cls = node.__class__
    if cls is Cmp:
        return _cmp_values(node.op, _resolve(node.left, scope), _resolve(node.right, scope))
    if cls is Quant:
        rows = bindings.get(node.name)
        if rows is None:
            raise EvaluationError(f"entity {node.name!r} is not bound in this group")
        prev = scope.get(node.name)
        body = node.body
        try:
            if node.exists:
                for row in rows:
                    scope[node.name] = row
                    if _eval(body, scope, bindings):
                        return True
                return False
            for row in rows:
                scope[node.name] = row
                if not _eval(body, scope, bindings):
                    return False
            return True
        finally:
            if prev is None:
                scope.pop(node.name, None)
            else:
                scope[node.name] = prev
    if cls is And:
        return all(_eval(p, scope, bindings) for p in node.parts)
    if cls is Or:
        return any(_eval(p, scope, bindings) for p in node.parts)
    if cls is Not:
        return not _eval(node.expr, scope, bindings)
    if cls is NullCheck:
        value = _resolve(node.operand, scope)
        return (value is not None) if node.negated else (value is None)
    if cls is Match:
        value = _resolve(node.operand, scope)
        if not isinstance(value, str):
            return False
        return _compiled(node.pattern).fullmatch(value) is not None
    if cls is InSet:
        value = _resolve(node.operand, scope)
        if value is None:
            return False
        return any(values_equal(value, item.value) for item in node.items)
    if cls is BoolConst:
        return node.value
    raise TypeError(f"not an expression node: {node!r}")


def _fmt_value(value: Any) -> str:
    if value is None:
        return "NULL"
    return format_literal(value)


def _operand_detail(operand: Any, scope: dict) -> str | None:
    if isinstance(operand, FieldRef):
        value = _resolve(operand, scope)
        return f"{operand.root}.{operand.path} = {_fmt_value(value)}"
    return None


_MAX_TRACED_ROWS = 3


def _trace(node: Any, scope: dict, bindings: dict) -> TraceNode:
    """Build the failure trace for a node known to evaluate false."""
    cls = node.__class__
    if cls in (Cmp, InSet, Match, NullCheck):
        operands = (node.left, node.right) if cls is Cmp else (node.operand,)
        details = [d for d in (_operand_detail(op, scope) for op in operands) if d]
        note = ""
        if cls is Cmp:
            a = _resolve(node.left, scope)
            b = _resolve(node.right, scope)
            if a is not None and b is not None and not _comparable(node.op, a, b):
                note = "; incompatible types"
        suffix = f" ({', '.join(details)})" if details else ""
        return TraceNode(f"{print_expr(node)} failed{suffix}{note}")
    if cls is And:
        failing = tuple(
            _trace(p, scope, bindings)
            for p in node.parts
            if not _eval(p, scope, bindings)
        )
        return TraceNode("", combiner="and", children=failing)
    if cls is Or:
        failing = tuple(_trace(p, scope, bindings) for p in node.parts)
        return TraceNode("", combiner="or", children=failing)
    if cls is Not:
        return TraceNode(
            f"NOT ({print_expr(node.expr)}) failed: inner condition held"
        )
    if cls is Quant:
        rows = bindings.get(node.name)
        if rows is None:
            raise EvaluationError(f"entity {node.name!r} is not bound in this group")
        prev = scope.get(node.name)
        children = []
        try:
            if node.exists:
                for i, row in enumerate(rows[:_MAX_TRACED_ROWS]):
                    scope[node.name] = row
                    inner = _trace(node.body, scope, bindings)
                    children.append(
                        TraceNode(f"row[{i}]: {explain_trace(inner)}")
                    )
                label = (
                    f"EXISTS({node.name}: {print_expr(node.body)}) failed: "
                    f"{len(rows)} bound row(s)"
                )
            else:
                bad = 0
                for i, row in enumerate(rows):
                    scope[node.name] = row
                    if not _eval(node.body, scope, bindings):
                        bad += 1
                        if len(children) < _MAX_TRACED_ROWS:
                            inner = _trace(node.body, scope, bindings)
                            children.append(
                                TraceNode(f"row[{i}]: {explain_trace(inner)}")
                            )
                label = (
                    f"FORALL({node.name}: {print_expr(node.body)}) failed: "
                    f"{bad} of {len(rows)} row(s) violated"
                )
        finally:
            if prev is None:
                scope.pop(node.name, None)
            else:
                scope[node.name] = prev
        return TraceNode(label, children=tuple(children))
    if cls is BoolConst:
        return TraceNode("FALSE failed")
    raise TypeError(f"not an expression node: {node!r}")


def _comparable(op: str, a: Any, b: Any) -> bool:
    a_bool = isinstance(a, bool)
    b_bool = isinstance(b, bool)
    if a_bool or b_bool:
        return a_bool and b_bool and op in ("==", "!=")
    a_num = isinstance(a, (int, float))
    b_num = isinstance(b, (int, float))
    if a_num and b_num:
        return True
    return isinstance(a, str) and isinstance(b, str)


def evaluate(inv: Invariant, group: Any) -> Verdict:
    """Evaluate one invariant against one joined group.

    The group must expose `focal` (attribute map of the focal row) and
    `bindings` (binding name -> list of rows).
    """
    scope = {inv.focal: group.focal}
    if _eval(inv.body, scope, group.bindings):
        return Verdict(passed=True, trace=None)
    scope = {inv.focal: group.focal}
    return Verdict(passed=False, trace=_trace(inv.body, scope, group.bindings))


def explain_trace(trace: TraceNode) -> str:
    if trace.combiner == "and":
        return " AND ".join(explain_trace(c) for c in trace.children)
    if trace.combiner == "or":
        return " OR ".join(explain_trace(c) for c in trace.children)
    text = trace.label
    if trace.children:
        text += "; " + "; ".join(explain_trace(c) for c in trace.children)
    return text


def explain(verdict: Verdict) -> str:
    """Human-readable account of a failed evaluation."""
    if verdict.passed or verdict.trace is None:
        return ""
    return explain_trace(verdict.trace)


def failing_conjuncts(inv: Invariant, group: Any) -> list[str]:
    """Printed top-level conjuncts that fail on the group.

    For a non-conjunctive body the whole printed body is returned when it
    fails.
    """
    scope = {inv.focal: group.focal}
    if isinstance(inv.body, And):
        return [
            print_expr(part)
            for part in inv.body.parts
            if not _eval(part, scope, group.bindings)
        ]
    if _eval(inv.body, scope, group.bindings):
        return []
    return [print_expr(inv.body)]
