"""Set expressions for the command line.

Grammar (whitespace between tokens is ignored)::

    expr  := ball:<point>:<r>
           | tube:<subgroup>:<delta>
           | rect:<subgroup>:<h>:<delta>:<rho>
           | union(expr, expr)
           | inter(expr, expr)
           | translate(expr, <point>)
           | file:<path>
    point := e | <num>(,<num>)*

Points are group parameters (quaternions for su2/so3, turn fractions for
tori, flattened matrices for SO(n)); ``e`` is the identity. ``<h>`` is the
coordinate along the subgroup.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .group_core import Group
from .regions import Ball, Intersection, SetRegion, Translate, Union
from .subgroup_catalog import builtin_subgroup, rectangle, tube

GRAMMAR = (
    "expr := ball:<point>:<r> | tube:<subgroup>:<delta> | rect:<subgroup>:<h>:<delta>:<rho>"
    " | union(expr,expr) | inter(expr,expr) | translate(expr,<point>) | file:<path>;"
    " point := e | num(,num)*"
)

_NUM = re.compile(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?")
_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


class ExprSyntaxError(ValueError):
    def __init__(self, text, pos, msg):
        self.text, self.pos = text, pos
        line = text.count("\n", 0, pos) + 1
        col = pos - (text.rfind("\n", 0, pos) + 1) + 1
        self.line, self.column = line, col
        super().__init__(f"line {line}, column {col}: {msg}\n  grammar: {GRAMMAR}")


@dataclass(frozen=True)
class Node:
    op: str
    args: tuple


class _Parser:
    def __init__(self, text):
        self.s = text
        self.i = 0

    def fail(self, msg):
        raise ExprSyntaxError(self.s, self.i, msg)

    def ws(self):
        while self.i < len(self.s) and self.s[self.i].isspace():
            self.i += 1

    def peek(self, lit):
        self.ws()
        return self.s.startswith(lit, self.i)

    def expect(self, lit):
        if not self.peek(lit):
            got = self.s[self.i:self.i + 1] or "end of input"
            self.fail(f"expected '{lit}', found '{got}'")
        self.i += len(lit)

    def number(self):
        self.ws()
        m = _NUM.match(self.s, self.i)
        if not m:
            self.fail("expected a number")
        self.i = m.end()
        return float(m.group())

    def name(self):
        self.ws()
        m = _NAME.match(self.s, self.i)
        if not m:
            self.fail("expected a name")
        self.i = m.end()
        return m.group()

    def point(self):
        self.ws()
        if self.s.startswith("e", self.i) and not _NUM.match(self.s, self.i):
            self.i += 1
            return None
        vals = [self.number()]
        while self.peek(","):
            save = self.i
            self.i += 1
            self.ws()
            if not _NUM.match(self.s, self.i):
                self.i = save
                break
            vals.append(self.number())
        return tuple(vals)

    def expr(self):
        self.ws()
        start = self.i
        head = self.name()
        if head in ("union", "inter"):
            self.expect("(")
            a = self.expr()
            self.expect(",")
            b = self.expr()
            self.expect(")")
            return Node(head, (a, b))
        if head == "translate":
            self.expect("(")
            a = self.expr()
            self.expect(",")
            g = self.point()
            self.expect(")")
            return Node(head, (a, g))
        if head == "ball":
            self.expect(":")
            c = self.point()
            self.expect(":")
            return Node("ball", (c, self.number()))
        if head == "tube":
            self.expect(":")
            H = self.name()
            self.expect(":")
            return Node("tube", (H, self.number()))
        if head == "rect":
            self.expect(":")
            H = self.name()
            self.expect(":")
            h = self.number()
            self.expect(":")
            d = self.number()
            self.expect(":")
            return Node("rect", (H, h, d, self.number()))
        if head == "file":
            self.expect(":")
            m = re.compile(r"[^,()\s]+").match(self.s, self.i)
            if not m:
                self.fail("expected a path")
            self.i = m.end()
            return Node("file", (m.group(),))
        self.i = start
        self.fail(f"unknown set constructor '{head}'")

    def parse(self):
        node = self.expr()
        self.ws()
        if self.i != len(self.s):
            self.fail(f"unexpected trailing text '{self.s[self.i:self.i + 10]}'")
        return node


def parse(text: str) -> Node:
    """Parse a set expression into a syntax tree; raises ExprSyntaxError."""
    return _Parser(text).parse()


def _point(G: Group, p):
    if p is None:
        return G.identity()
    v = np.asarray(p, float)
    if v.shape != (G.param_dim,):
        raise ValueError(f"{G.name} points have {G.param_dim} coordinates, got {len(v)}")
    return v


def files_in(node: Node):
    if node.op == "file":
        return [node.args[0]]
    return [f for a in node.args if isinstance(a, Node) for f in files_in(a)]


def build(node: Node, G: Group, load=None) -> SetRegion:
    """Turn a syntax tree into a region on G. ``load(path)`` resolves file: leaves."""
    op, a = node.op, node.args
    if op == "ball":
        return Ball(G, _point(G, a[0]), a[1])
    if op == "tube":
        return tube(builtin_subgroup(G, a[0]), a[1])
    if op == "rect":
        H = builtin_subgroup(G, a[0])
        return rectangle(H, H.element(np.array([a[1]])), a[2], a[3])
    if op == "union":
        return Union(build(a[0], G, load), build(a[1], G, load))
    if op == "inter":
        return Intersection(build(a[0], G, load), build(a[1], G, load))
    if op == "translate":
        return Translate(build(a[0], G, load), _point(G, a[1]))
    if op == "file":
        if load is None:
            raise ValueError("file: sets need a net to load into")
        return load(a[0])
    raise ValueError(op)


def region(text: str, G: Group, load=None) -> SetRegion:
    return build(parse(text), G, load)
