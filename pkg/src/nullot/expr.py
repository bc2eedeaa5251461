"""A small arithmetic expression language.

Expressions are ordinary Python arithmetic over a fixed set of variable names,
for example ``"0.5*log(s) + t**2"``.  They are validated against a whitelist
of syntax nodes and converted to sympy, so they can be differentiated exactly.
"""

import ast

import numpy as np
import sympy as sp

from .errors import ParseError

SMOOTH_FUNCS = {
    "log": sp.log,
    "exp": sp.exp,
    "sin": sp.sin,
    "cos": sp.cos,
    "tan": sp.tan,
    "sinh": sp.sinh,
    "cosh": sp.cosh,
    "tanh": sp.tanh,
    "sqrt": sp.sqrt,
}
# functions that are only continuous; expressions using them are tagged c0
NONSMOOTH_FUNCS = {"abs": sp.Abs, "min": sp.Min, "max": sp.Max}
CONSTANTS = {"pi": sp.pi, "e": sp.E}

_BINOPS = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.Div: lambda a, b: a / b,
    ast.Pow: lambda a, b: a**b,
}


class Expression:
    """Parsed expression: sympy form plus the smoothness tag."""

    def __init__(self, text, symbols, tree, smooth):
        self.text = text
        self.symbols = symbols
        self.sym = tree
        self.smooth = smooth

    @property
    def free_names(self):
        return sorted(str(s) for s in self.sym.free_symbols)

    def lambdify(self):
        f = sp.lambdify(self.symbols, self.sym, modules="numpy")

        def evaluate(*args):
            out = f(*args)
            shape = np.broadcast(*args).shape if args else ()
            return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()

        return evaluate

    def __repr__(self):
        return f"Expression({self.text!r})"


def parse_expression(text, names):
    """Parse ``text`` allowing the variable ``names``; raise ParseError."""
    if not isinstance(text, str) or not text.strip():
        raise ParseError("empty expression")
    try:
        node = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ParseError(f"invalid expression {text!r}: {exc.msg}", 1, exc.offset) from None
    symbols = [sp.Symbol(n, real=True) for n in names]
    table = dict(zip(names, symbols))
    state = {"smooth": True}

    def bad(n, what):
        raise ParseError(f"{what} not allowed in expression {text!r}", 1, getattr(n, "col_offset", 0) + 1)

    def conv(n):
        if isinstance(n, ast.Expression):
            return conv(n.body)
        if isinstance(n, ast.Constant):
            if isinstance(n.value, bool) or not isinstance(n.value, (int, float)):
                bad(n, "non-numeric constant")
            return sp.Float(n.value) if isinstance(n.value, float) else sp.Integer(n.value)
        if isinstance(n, ast.Name):
            if n.id in table:
                return table[n.id]
            if n.id in CONSTANTS:
                return CONSTANTS[n.id]
            bad(n, f"unknown name {n.id!r}")
        if isinstance(n, ast.BinOp) and type(n.op) in _BINOPS:
            return _BINOPS[type(n.op)](conv(n.left), conv(n.right))
        if isinstance(n, ast.UnaryOp) and isinstance(n.op, (ast.USub, ast.UAdd)):
            v = conv(n.operand)
            return -v if isinstance(n.op, ast.USub) else v
        if isinstance(n, ast.Call) and isinstance(n.func, ast.Name) and not n.keywords:
            name = n.func.id
            args = [conv(a) for a in n.args]
            if name in SMOOTH_FUNCS and len(args) == 1:
                return SMOOTH_FUNCS[name](*args)
            if name in NONSMOOTH_FUNCS and len(args) >= 1:
                state["smooth"] = False
                return NONSMOOTH_FUNCS[name](*args)
            bad(n, f"call to {name!r}")
        bad(n, type(n).__name__)

    tree = conv(node)
    return Expression(text, symbols, tree, state["smooth"])
