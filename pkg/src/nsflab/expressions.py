"""A small arithmetic language for closed-form data.

Expressions use Python syntax restricted to numbers, ``+ - * / **`` (``^`` is
accepted for powers), parentheses, the variables ``x, y, z, t``, the
constants ``pi`` and ``e``, and the functions listed in ``FUNCTIONS``.
Anything else is rejected before evaluation.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass

import numpy as np
import sympy as sym

FUNCTIONS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log, "sqrt": np.sqrt,
    "sinh": np.sinh, "cosh": np.cosh, "tanh": np.tanh, "abs": np.abs, "atan": np.arctan,
}
CONSTANTS = {"pi": np.pi, "e": np.e}
VARIABLES = ("x", "y", "z", "t")

_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)
_UNARY = (ast.UAdd, ast.USub)


class ExpressionError(ValueError):
    pass


def _check(node: ast.AST, text: str, allowed_vars) -> None:
    if isinstance(node, ast.Expression):
        _check(node.body, text, allowed_vars)
    elif isinstance(node, ast.BinOp) and isinstance(node.op, _BINOPS):
        _check(node.left, text, allowed_vars)
        _check(node.right, text, allowed_vars)
    elif isinstance(node, ast.UnaryOp) and isinstance(node.op, _UNARY):
        _check(node.operand, text, allowed_vars)
    elif isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        pass
    elif isinstance(node, ast.Name):
        if node.id not in allowed_vars and node.id not in CONSTANTS:
            raise ExpressionError(f"unknown name {node.id!r} in {text!r}")
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
            raise ExpressionError(f"unknown function in {text!r}")
        if len(node.args) != 1 or node.keywords:
            raise ExpressionError(f"{node.func.id} takes exactly one argument in {text!r}")
        _check(node.args[0], text, allowed_vars)
    else:
        raise ExpressionError(f"unsupported syntax {type(node).__name__} in {text!r}")


@dataclass(frozen=True)
class Expr:
    """A validated expression; call with coordinate arrays (and ``t=``)."""

    text: str
    variables: tuple[str, ...] = VARIABLES

    def __post_init__(self):
        src = str(self.text).replace("^", "**")
        try:
            tree = ast.parse(src, mode="eval")
        except SyntaxError as e:
            raise ExpressionError(f"cannot parse {self.text!r}: {e.msg}") from None
        _check(tree, self.text, self.variables)
        object.__setattr__(self, "_code", compile(tree, "<expr>", "eval"))
        object.__setattr__(self, "_src", src)

    @property
    def uses_time(self) -> bool:
        return "t" in {n.id for n in ast.walk(ast.parse(self._src, mode="eval")) if isinstance(n, ast.Name)}

    def __call__(self, *coords, t: float = 0.0) -> np.ndarray:
        env = dict(FUNCTIONS)
        env.update(CONSTANTS)
        for name, c in zip("xyz", coords):
            env[name] = np.asarray(c, dtype=float)
        env["t"] = float(t)
        shape = np.broadcast_shapes(*(np.shape(c) for c in coords)) if coords else ()
        with np.errstate(all="raise", under="ignore"):
            try:
                val = eval(self._code, {"__builtins__": {}}, env)
            except FloatingPointError as err:
                raise ExpressionError(f"{self.text!r} is not finite on the grid ({err})") from None
        return np.broadcast_to(np.asarray(val, dtype=float), shape).copy()

    def sympy(self) -> sym.Expr:
        names = {v: sym.Symbol(v, real=True) for v in VARIABLES}
        names.update({"pi": sym.pi, "e": sym.E, "abs": sym.Abs, "atan": sym.atan})
        return sym.sympify(self._src, locals=names)


def parse_expr(value, variables=VARIABLES) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, bool) or value is None:
        raise ExpressionError(f"expected an expression, got {value!r}")
    return Expr(str(value), tuple(variables))
