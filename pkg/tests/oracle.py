"""Direct recursive evaluator for the pure subset of the surface language.

Written against the language description only; it shares no code with the
compiler or the machine (it walks the reader's output).  Numbers use numpy
float64 so that division by zero follows IEEE rules independently of the
machine's own handling.
"""

from __future__ import annotations

import numpy as np

from reflexec.lang.reader import Atom, parse_many


class OracleError(Exception):
    pass


class _Env:
    def __init__(self, parent=None):
        self.vars = {}
        self.parent = parent

    def find(self, name):
        e = self
        while e is not None:
            if name in e.vars:
                return e
            e = e.parent
        raise OracleError(f"unbound {name}")


class _Closure:
    def __init__(self, params, body, env):
        self.params, self.body, self.env = params, body, env


NIL = None


def _num(v):
    if type(v) is not np.float64:
        raise OracleError(f"number expected, got {v!r}")
    return v


def _bool(v):
    if type(v) is not bool:
        raise OracleError(f"boolean expected, got {v!r}")
    return v


def _same(a, b) -> bool:
    if type(a) is not type(b):
        return False
    return bool(a == b) if not isinstance(a, _Closure) else a is b


def _show(v) -> str:
    if v is None:
        return "nil"
    if v is True:
        return "true"
    if v is False:
        return "false"
    if type(v) is np.float64:
        f = float(v)
        if f != f:
            return "nan"
        if f in (float("inf"), float("-inf")):
            return "inf" if f > 0 else "-inf"
        return "%.14g" % f
    if type(v) is str:
        return v
    raise OracleError("cannot show a closure")


class Oracle:
    def __init__(self):
        self.output: list[str] = []

    def apply(self, fn, arg):
        if not isinstance(fn, _Closure):
            raise OracleError("not a function")
        env = _Env(fn.env)
        env.vars[fn.params[0]] = arg
        if len(fn.params) > 1:
            return _Closure(fn.params[1:], fn.body, env)
        return self.body(fn.body, env)

    def body(self, forms, env):
        result = NIL
        for f in forms:
            result = self.eval(f, env)
        return result

    def eval(self, e, env):
        if isinstance(e, Atom):
            if e.kind == "symbol":
                return env.find(e.value).vars[e.value]
            if e.kind == "number":
                return np.float64(e.value)
            return e.value
        head, args = e.items[0], e.items[1:]
        if isinstance(head, Atom) and head.kind == "symbol":
            h = head.value
            if h == "lambda":
                params = [p.value for p in args[0].items] or ["_"]
                return _Closure(params, list(args[1:]), env)
            if h == "define":
                v = self.eval(args[1], env)
                env.vars[args[0].value] = v
                return v
            if h == "set!":
                v = self.eval(args[1], env)
                env.find(args[0].value).vars[args[0].value] = v
                return v
            if h == "if":
                if _bool(self.eval(args[0], env)):
                    return self.eval(args[1], env)
                return self.eval(args[2], env) if len(args) > 2 else NIL
            if h == "begin":
                return self.body(list(args), env)
            if h == "while":
                while _bool(self.eval(args[0], env)):
                    # every iteration runs in its own scope
                    self.body(list(args[1:]), _Env(env))
                return NIL
            if h == "and":
                return self.eval(args[1], env) if _bool(self.eval(args[0], env)) else False
            if h == "or":
                return True if _bool(self.eval(args[0], env)) else self.eval(args[1], env)
            if h in _ARITH:
                vals = [self.eval(a, env) for a in args]
                return _ARITH[h](vals)
            if h == "=":
                a, b = (self.eval(x, env) for x in args)
                return _same(a, b)
            if h == "<":
                a, b = (self.eval(x, env) for x in args)
                if type(a) is np.float64 and type(b) is np.float64:
                    return bool(a < b)
                if type(a) is str and type(b) is str:
                    return a < b
                raise OracleError("bad comparison")
            if h == "print":
                v = self.eval(args[0], env)
                self.output.append(_show(v))
                return NIL
            if h == "not":
                return not _bool(self.eval(args[0], env))
        fn = self.eval(head, env)
        if not args:
            return self.apply(fn, NIL)
        for a in args:
            fn = self.apply(fn, self.eval(a, env))
        return fn


def _fold(op):
    def f(vals):
        acc = _num(vals[0])
        for v in vals[1:]:
            acc = op(acc, _num(v))
        return acc
    return f


def _minus(vals):
    if len(vals) == 1:
        return np.float64(0.0) - _num(vals[0])
    return _num(vals[0]) - _num(vals[1])


def _divide(vals):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.float64(_num(vals[0]) / _num(vals[1]))


_ARITH = {"+": _fold(lambda a, b: a + b), "*": _fold(lambda a, b: a * b),
          "-": _minus, "/": _divide}


def evaluate(source: str):
    """``("ok", value, output)`` or ``("error", None, output)``."""
    o = Oracle()
    try:
        v = o.body(parse_many(source), _Env())
    except (OracleError, RecursionError):
        return "error", None, o.output
    if isinstance(v, _Closure):
        return "ok", "<closure>", o.output
    if type(v) is np.float64:
        v = float(v)
    return "ok", v, o.output
