"""Closed-form expressions over (x, y, t) for spatial fields in scenario files.

Grammar: numbers, the variables x, y, t, the constants pi and e, the binary
operators + - * / ^ (power), unary minus, parentheses and the functions
sin, cos, exp (plus tanh, sqrt, log for convenience).  Parsing uses the
standard-library ``ast`` module with a whitelist of node types.
"""

import ast

import numpy as np

FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "tanh": np.tanh,
    "sqrt": np.sqrt,
    "log": np.log,
}
CONSTS = {"pi": np.pi, "e": np.e}
VARS = ("x", "y", "t")

_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


class ExpressionError(ValueError):
    pass


class Expression:
    """A parsed expression, callable as ``expr(x, y=0, t=0)``."""

    def __init__(self, text):
        if isinstance(text, (int, float)):
            text = repr(float(text))
        if not isinstance(text, str):
            raise ExpressionError(f"expression must be a string or number, got {text!r}")
        self.text = text
        try:
            tree = ast.parse(text.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {text!r}: {exc.msg}") from None
        self._check(tree.body)
        self._tree = tree.body

    def _check(self, node):
        if isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise ExpressionError(f"operator not allowed in {self.text!r}")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                raise ExpressionError(f"operator not allowed in {self.text!r}")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCS:
                raise ExpressionError(f"unknown function in {self.text!r}")
            if len(node.args) != 1 or node.keywords:
                raise ExpressionError(f"functions take one argument: {self.text!r}")
            self._check(node.args[0])
        elif isinstance(node, ast.Name):
            if node.id not in VARS and node.id not in CONSTS:
                raise ExpressionError(f"unknown name {node.id!r} in {self.text!r}")
        elif isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)):
                raise ExpressionError(f"bad constant in {self.text!r}")
        else:
            raise ExpressionError(f"unsupported syntax in {self.text!r}")

    def _eval(self, node, env):
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Call):
            return FUNCS[node.func.id](self._eval(node.args[0], env))
        if isinstance(node, ast.Name):
            return env[node.id] if node.id in env else CONSTS[node.id]
        return float(node.value)

    def __call__(self, x, y=0.0, t=0.0):
        x = np.asarray(x, dtype=float)
        env = {"x": x, "y": np.asarray(y, dtype=float), "t": np.asarray(t, dtype=float)}
        with np.errstate(all="raise"):
            try:
                val = self._eval(self._tree, env)
            except FloatingPointError as exc:
                raise ExpressionError(f"evaluation of {self.text!r} failed: {exc}") from None
        return np.broadcast_to(np.asarray(val, dtype=float), np.broadcast(x, env["y"]).shape).copy()

    def __repr__(self):
        return f"Expression({self.text!r})"


def compile_vector(items):
    """List of expression strings -> callable returning a stacked array."""
    exprs = [Expression(e) for e in items]

    def fn(x, y=0.0, t=0.0):
        return np.stack([ex(x, y, t) for ex in exprs])

    fn.exprs = exprs
    return fn


def compile_scalar(item):
    return Expression(item)
