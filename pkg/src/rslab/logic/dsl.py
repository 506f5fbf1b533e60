"""Reader and writer for the task description language.

Example::

    task boia;
    concept red : 2;
    concept ped : 2;
    label Y : 2;
    knowledge { (ped | red) <-> (Y = 0) }

Arithmetic comparisons between integer polynomials are sugar, for example
``Y == D1 + D2``, ``P == D1 * D2`` or ``G <-> (D1 > D2)``.

A ``support { (0, 1) : 0.5; (1, 0) : 0.5; }`` block is optional; weights are
optional too, but must be given for all vectors or none.  The same schema is
accepted as JSON (see :func:`task_from_json`).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from .formula import (
    And, Atom, Const, Formula, Iff, Implies, Not, Or, Poly, Relation, Xor, to_text,
)
from .spaces import DEFAULT_CAP, TaskError
from .task import TaskSpec


class ParseError(TaskError):
    def __init__(self, message: str, line: int, col: int):
        self.line = line
        self.col = col
        super().__init__(f"{line}:{col}: {message}")


@dataclass
class Token:
    kind: str
    text: str
    line: int
    col: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*|//[^\n]*)
  | (?P<num>\d+\.\d*(?:[eE][-+]?\d+)?|\d+[eE][-+]?\d+|\.\d+|\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<sym><->|->|==|!=|<=|>=|[;:{}(),=!&|^+\-*<>])
    """,
    re.VERBOSE,
)

RELOPS = ("==", "!=", "<", "<=", ">", ">=")

KEYWORDS = {"concept", "label", "support", "knowledge", "task", "true", "false"}


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            tok_kind = kind
            if kind == "ident" and m.group() in KEYWORDS:
                tok_kind = m.group()
            elif kind == "sym":
                tok_kind = m.group()
            tokens.append(Token(tok_kind, m.group(), line, col))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0
        # (name, value or None for bare identifiers, token) of every reference
        self.refs: list[tuple[str, int | None, Token]] = []

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def error(self, msg: str, tok: Token | None = None):
        tok = tok or self.tok
        return ParseError(msg, tok.line, tok.col)

    def accept(self, kind: str) -> Token | None:
        if self.tok.kind == kind:
            t = self.tok
            self.i += 1
            return t
        return None

    def expect(self, kind: str, what: str | None = None) -> Token:
        t = self.accept(kind)
        if t is None:
            found = self.tok.text or "end of input"
            raise self.error(f"expected {what or repr(kind)}, found {found!r}")
        return t

    def integer(self) -> int:
        t = self.expect("num", "an integer")
        if not t.text.isdigit():
            raise self.error("expected an integer", t)
        return int(t.text)

    # formula := iff
    def formula(self) -> Formula:
        left = self.implies()
        while self.accept("<->"):
            left = Iff(left, self.implies())
        return left

    def implies(self) -> Formula:
        left = self.disj()
        if self.accept("->"):
            return Implies(left, self.implies())
        return left

    def disj(self) -> Formula:
        left = self.xor()
        while self.accept("|"):
            left = Or(left, self.xor())
        return left

    def xor(self) -> Formula:
        left = self.conj()
        while self.accept("^"):
            left = Xor(left, self.conj())
        return left

    def conj(self) -> Formula:
        left = self.unary()
        while self.accept("&"):
            left = And(left, self.unary())
        return left

    def unary(self) -> Formula:
        if self.accept("!"):
            return Not(self.unary())
        return self.primary()

    def primary(self) -> Formula:
        if self.accept("("):
            f = self.formula()
            self.expect(")", "')'")
            return f
        if self.accept("true"):
            return Const(True)
        if self.accept("false"):
            return Const(False)
        if self.tok.kind in ("num", "-"):
            return self.relation()
        t = self.expect("ident", "a formula")
        if self.accept("="):
            value = self.integer()
            self.refs.append((t.text, value, t))
            return Atom(t.text, value)
        if self.tok.kind in RELOPS or self.tok.kind in ("+", "-", "*"):
            self.i -= 1
            return self.relation()
        self.refs.append((t.text, None, t))
        return Atom(t.text, 1)

    def relation(self) -> Relation:
        left = self.poly()
        op = self.tok
        if op.kind not in RELOPS:
            raise self.error("expected a comparison ('==', '!=', '<', '<=', '>', '>=')")
        self.i += 1
        return Relation(op.kind, left, self.poly())

    def poly(self) -> Poly:
        terms = []
        sign = -1 if self.accept("-") else 1
        while True:
            coef, names = sign, []
            while True:
                if self.tok.kind == "num":
                    coef *= self.integer()
                else:
                    name = self.expect("ident", "a variable or integer")
                    self.refs.append((name.text, -1, name))
                    names.append(name.text)
                if not self.accept("*"):
                    break
            terms.append((coef, tuple(names)))
            if self.accept("+"):
                sign = 1
            elif self.accept("-"):
                sign = -1
            else:
                return Poly.build(terms)

    def check_refs(self, cards: dict) -> None:
        for ref, value, tok in self.refs:
            if ref not in cards:
                raise self.error(f"undeclared variable {ref!r}", tok)
            if value is None and cards[ref] != 2:
                raise self.error(f"bare variable {ref!r} needs cardinality 2; write '{ref} = <value>'", tok)
            if value is not None and value >= 0 and value >= cards[ref]:
                raise self.error(f"value {value} out of range for {ref!r} (cardinality {cards[ref]})", tok)

    def vector(self) -> tuple[int, ...]:
        paren = self.accept("(")
        values = [self.integer()]
        while self.accept(",") or (self.tok.kind == "num" and not paren):
            values.append(self.integer())
        if paren:
            self.expect(")", "')'")
        return tuple(values)

    def task(self, cap: int) -> TaskSpec:
        name = "task"
        concepts, labels, decl_tok = [], [], {}
        support, weights, knowledge = None, [], None
        know_tok = None
        while self.tok.kind != "eof":
            t = self.tok
            if self.accept("task"):
                if self.tok.kind != "ident" and self.tok.kind not in KEYWORDS:
                    raise self.error("expected a task name")
                name = self.tok.text
                self.i += 1
                self.expect(";", "';'")
            elif self.accept("concept") or self.accept("label"):
                ident = self.expect("ident", "a variable name")
                self.expect(":", "':'")
                card = self.integer()
                self.expect(";", "';'")
                if ident.text in decl_tok:
                    raise self.error(f"variable {ident.text!r} declared twice", ident)
                if card < 2:
                    raise self.error(f"cardinality of {ident.text!r} must be >= 2", ident)
                decl_tok[ident.text] = ident
                (concepts if t.kind == "concept" else labels).append((ident.text, card))
            elif self.accept("support"):
                if support is not None:
                    raise self.error("support declared twice", t)
                self.expect("{", "'{'")
                support = []
                while not self.accept("}"):
                    support.append(self.vector())
                    if self.accept(":"):
                        w = self.expect("num", "a weight")
                        weights.append(float(w.text))
                    else:
                        weights.append(None)
                    if not self.accept(";") and self.tok.kind != "}":
                        raise self.error("expected ';' or '}'")
            elif self.accept("knowledge"):
                if knowledge is not None:
                    raise self.error("knowledge declared twice", t)
                know_tok = t
                self.expect("{", "'{'")
                knowledge = self.formula()
                self.expect("}", "'}'")
            else:
                raise self.error(f"unexpected {t.text!r}")
        if not concepts:
            raise TaskError("at least one concept required")
        if knowledge is None:
            raise TaskError("missing knowledge block")
        self.check_refs(dict(concepts + labels))
        dist = None
        if support is not None:
            given = [w is not None for w in weights]
            if any(given) and not all(given):
                raise TaskError("support weights must be given for every vector or none")
            if all(given) and weights:
                dist = weights
        try:
            return TaskSpec.create(concepts, labels, knowledge, support, dist, name=name, cap=cap)
        except ParseError:
            raise
        except TaskError as exc:
            anchor = know_tok or self.toks[0]
            raise ParseError(str(exc), anchor.line, anchor.col) from None


def parse_task(text: str, cap: int = DEFAULT_CAP) -> TaskSpec:
    """Parse a task from DSL or JSON text."""
    if text.lstrip().startswith("{"):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, exc.lineno, exc.colno) from None
        return task_from_json(obj, cap=cap)
    return _Parser(text).task(cap)


def parse_formula(text: str) -> Formula:
    p = _Parser(text)
    f = p.formula()
    if p.tok.kind != "eof":
        raise p.error(f"unexpected {p.tok.text!r}")
    return f


def pretty_print(task: TaskSpec) -> str:
    lines = [f"task {task.name};"]
    lines += [f"concept {n} : {c};" for n, c in zip(task.concepts.names, task.concepts.cards)]
    lines += [f"label {n} : {c};" for n, c in zip(task.labels.names, task.labels.cards)]
    if not task.full_support or task.distribution is not None:
        lines.append("support {")
        for i, v in enumerate(task.support):
            w = f" : {task.distribution[i]!r}" if task.distribution is not None else ""
            lines.append(f"  ({', '.join(map(str, v))}){w};")
        lines.append("}")
    lines.append(f"knowledge {{ {to_text(task.source)} }}")
    return "\n".join(lines) + "\n"


def task_from_json(obj: dict, cap: int = DEFAULT_CAP) -> TaskSpec:
    try:
        concepts = [(c["name"], int(c["card"])) for c in obj.get("concepts", [])]
        labels = [(c["name"], int(c["card"])) for c in obj.get("labels", [])]
        text = obj["knowledge"]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed JSON task: missing {exc}", 1, 1) from None
    if not concepts:
        raise TaskError("at least one concept required")
    p = _Parser(text)
    knowledge = p.formula()
    if p.tok.kind != "eof":
        raise p.error(f"unexpected {p.tok.text!r}")
    p.check_refs(dict(concepts + labels))
    return TaskSpec.create(
        concepts, labels, knowledge, obj.get("support"), obj.get("distribution"),
        name=obj.get("name", "task"), cap=cap,
    )


def task_to_json(task: TaskSpec) -> dict:
    return {
        "name": task.name,
        "concepts": [{"name": n, "card": c} for n, c in zip(task.concepts.names, task.concepts.cards)],
        "labels": [{"name": n, "card": c} for n, c in zip(task.labels.names, task.labels.cards)],
        "support": [list(v) for v in task.support],
        "distribution": list(task.distribution) if task.distribution is not None else None,
        "knowledge": to_text(task.source),
    }
