"""Closed expression grammar for macroscopic coefficients and sources.

Config files carry coefficient factors, right-hand sides and test-function
envelopes as strings like "1 + 0.5*sin(pi*x)".  Only a fixed whitelist of
names and operators is admitted, so configs stay data: no callables, no
attribute access, no side effects.  Compiled expressions evaluate with numpy
broadcasting over point batches.
"""

from __future__ import annotations

import ast
import math

import numpy as np


class ExpressionError(ValueError):
    pass


_FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "tanh": np.tanh,
    "min": np.minimum,
    "max": np.maximum,
}

_CONSTANTS = {"pi": math.pi, "e": math.e}

_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load,
    ast.Constant, ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub,
    ast.UAdd,
)


class Expression:
    """Compiled scalar expression over named macro variables."""

    __slots__ = ("source", "variables", "_code")

    def __init__(self, source: str, variables: tuple):
        self.source = source
        self.variables = tuple(variables)
        try:
            tree = ast.parse(source, mode="eval")
        except SyntaxError as exc:
            raise ExpressionError("cannot parse %r: %s" % (source, exc)) from exc
        for node in ast.walk(tree):
            if not isinstance(node, _ALLOWED_NODES):
                raise ExpressionError(
                    "disallowed syntax %r in %r" % (type(node).__name__, source)
                )
            if isinstance(node, ast.Call):
                if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCTIONS:
                    raise ExpressionError("only %s may be called" % sorted(_FUNCTIONS))
                if node.keywords:
                    raise ExpressionError("keyword arguments are not part of the grammar")
            if isinstance(node, ast.Name):
                if node.id not in self.variables and node.id not in _FUNCTIONS and node.id not in _CONSTANTS:
                    raise ExpressionError("unknown name %r in %r" % (node.id, source))
            if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
                raise ExpressionError("only numeric literals are allowed")
        self._code = compile(tree, "<expression>", "eval")

    def __call__(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at points of shape (P, len(variables)); returns (P,)."""
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        if points.shape[1] != len(self.variables):
            raise ExpressionError(
                "expected %d coordinates per point, got %d" % (len(self.variables), points.shape[1])
            )
        env = dict(_FUNCTIONS)
        env.update(_CONSTANTS)
        for i, name in enumerate(self.variables):
            env[name] = points[:, i]
        out = eval(self._code, {"__builtins__": {}}, env)
        return np.broadcast_to(np.asarray(out, dtype=float), (points.shape[0],)).copy()

    def __repr__(self):
        return "Expression(%r, variables=%r)" % (self.source, self.variables)


def macro_variables(n: int) -> tuple:
    """Coordinate names for an n-dimensional macro domain: x, or x1..xn."""
    if n == 1:
        return ("x",)
    return tuple("x%d" % (i + 1) for i in range(n))


def compile_macro_expression(source: str, n: int) -> Expression:
    return Expression(source, macro_variables(n))


def constant_expression(value: float, n: int) -> Expression:
    return Expression(repr(float(value)), macro_variables(n))
