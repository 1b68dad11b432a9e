"""A small arithmetic expression language for scenario files.

Expressions are parsed with :mod:`ast` and restricted to numbers, named
variables, ``+ - * / **``, and the analytic functions ``tanh exp sin cos``.
Because every admissible expression is analytic, first derivatives are
computed by the complex-step method and are exact to rounding.
"""
from __future__ import annotations

import ast
import operator
from typing import Callable, Sequence

import numpy as np

_FUNCS = {"tanh": np.tanh, "exp": np.exp, "sin": np.sin, "cos": np.cos}
_CONSTS = {"pi": np.pi, "e": np.e}
_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_STEP = 1e-30


class ExprError(ValueError):
    pass


def _compile(node: ast.AST, index: dict[str, int], src: str) -> Callable:
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        c = float(node.value)
        return lambda x: c
    if isinstance(node, ast.Name):
        if node.id in index:
            i = index[node.id]
            return lambda x: x[i]
        if node.id in _CONSTS:
            c = _CONSTS[node.id]
            return lambda x: c
        raise ExprError(f"unknown name {node.id!r} in {src!r}")
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        f = _compile(node.operand, index, src)
        if isinstance(node.op, ast.USub):
            return lambda x: -f(x)
        return f
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        if isinstance(node.op, ast.Pow) and not isinstance(node.right, (ast.Constant, ast.UnaryOp)):
            raise ExprError(f"exponents must be numeric constants in {src!r}")
        op = _BINOPS[type(node.op)]
        a = _compile(node.left, index, src)
        b = _compile(node.right, index, src)
        return lambda x: op(a(x), b(x))
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS:
        if len(node.args) != 1 or node.keywords:
            raise ExprError(f"{node.func.id} takes exactly one argument in {src!r}")
        fn = _FUNCS[node.func.id]
        a = _compile(node.args[0], index, src)
        return lambda x: fn(a(x))
    raise ExprError(f"unsupported syntax {ast.dump(node)[:40]}... in {src!r}")


class ExprMap:
    """A vector of expressions ``R^dim -> R^m`` in the given variable names."""

    def __init__(self, sources: Sequence[str], variables: Sequence[str]):
        if isinstance(sources, str):
            sources = [sources]
        self.sources = list(sources)
        self.variables = list(variables)
        index = {name: i for i, name in enumerate(self.variables)}
        self._fns = []
        self._steps = 1j * _STEP * np.eye(len(self.variables))
        for src in self.sources:
            try:
                tree = ast.parse(str(src), mode="eval")
            except SyntaxError as exc:
                raise ExprError(f"cannot parse {src!r}: {exc.msg}") from None
            self._fns.append(_compile(tree.body, index, src))

    @property
    def dim_in(self) -> int:
        return len(self.variables)

    @property
    def dim_out(self) -> int:
        return len(self.sources)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.array([np.real(f(x)) for f in self._fns], dtype=float) + np.zeros(self.dim_out)

    def jacobian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = self.dim_in
        # column k of the perturbed arguments carries the imaginary step in variable k
        z = x[:, None] + self._steps
        rows = [np.imag(np.broadcast_to(f(z), (d,))) / _STEP for f in self._fns]
        return np.array(rows, dtype=float).reshape(self.dim_out, d)


def names(prefix: str, count: int) -> list[str]:
    return [f"{prefix}{i + 1}" for i in range(count)]
