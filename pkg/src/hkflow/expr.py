"""A tiny expression language for potentials and initial densities.

Expressions are functions of ``x`` built from numbers, ``pi``, ``+ - * /``,
integer or constant powers, and the calls ``cos``, ``sin``, ``exp``.  They are
parsed with :mod:`ast`, checked against a whitelist and evaluated together with
their ``x``-derivative (forward mode), so a potential string gives both ``V``
and ``V'``.

>>> e = Expression("1 + 0.5*cos(2*pi*x)")
>>> float(e(0.0))
1.5
"""

from __future__ import annotations

import ast
import math

import numpy as np


class ExpressionError(ValueError):
    pass


_CALLS = {
    "cos": (np.cos, lambda v: -np.sin(v)),
    "sin": (np.sin, np.cos),
    "exp": (np.exp, np.exp),
}
_CONSTANTS = {"pi": math.pi, "e": math.e}


class Expression:
    def __init__(self, source: str):
        if not isinstance(source, str) or not source.strip():
            raise ExpressionError("expression must be a non-empty string")
        self.source = source
        try:
            tree = ast.parse(source, mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {source!r}: {exc.msg}") from None
        self._body = tree.body
        self._validate(self._body)

    def __repr__(self):
        return f"Expression({self.source!r})"

    def _validate(self, node):
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise ExpressionError(f"unsupported constant {node.value!r}")
        elif isinstance(node, ast.Name):
            if node.id != "x" and node.id not in _CONSTANTS:
                raise ExpressionError(f"unknown name {node.id!r}")
        elif isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
            self._validate(node.operand)
        elif isinstance(node, ast.BinOp) and isinstance(
            node.op, (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)
        ):
            self._validate(node.left)
            self._validate(node.right)
            if isinstance(node.op, ast.Pow) and _mentions_x(node.right):
                raise ExpressionError("exponents must not depend on x")
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _CALLS:
                raise ExpressionError("only cos, sin and exp may be called")
            if len(node.args) != 1 or node.keywords:
                raise ExpressionError(f"{node.func.id} takes exactly one argument")
            self._validate(node.args[0])
        else:
            raise ExpressionError(f"unsupported syntax: {ast.dump(node)[:60]}")

    def _eval(self, node, x):
        if isinstance(node, ast.Constant):
            return float(node.value), 0.0
        if isinstance(node, ast.Name):
            if node.id == "x":
                return x, np.ones_like(x)
            return _CONSTANTS[node.id], 0.0
        if isinstance(node, ast.UnaryOp):
            v, d = self._eval(node.operand, x)
            return (-v, -d) if isinstance(node.op, ast.USub) else (v, d)
        if isinstance(node, ast.BinOp):
            a, da = self._eval(node.left, x)
            b, db = self._eval(node.right, x)
            op = node.op
            if isinstance(op, ast.Add):
                return a + b, da + db
            if isinstance(op, ast.Sub):
                return a - b, da - db
            if isinstance(op, ast.Mult):
                return a * b, da * b + a * db
            if isinstance(op, ast.Div):
                return a / b, (da * b - a * db) / (b * b)
            # constant exponent
            return a**b, b * a ** (b - 1) * da
        fn, dfn = _CALLS[node.func.id]
        v, d = self._eval(node.args[0], x)
        return fn(v), dfn(v) * d

    def value_and_derivative(self, x):
        x = np.asarray(x, dtype=float)
        v, d = self._eval(self._body, x)
        return np.broadcast_to(v, x.shape) * 1.0, np.broadcast_to(d, x.shape) * 1.0

    def __call__(self, x):
        return self.value_and_derivative(x)[0]

    def derivative(self, x):
        return self.value_and_derivative(x)[1]


def _mentions_x(node) -> bool:
    return any(isinstance(n, ast.Name) and n.id == "x" for n in ast.walk(node))
