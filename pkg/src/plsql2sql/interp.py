"""Reference interpreter for parsed functions.

This fixes the language's semantics: every later stage (SSA, ANF, UDF,
CTE simulation) must reproduce what this interpreter computes for the
same arguments and the same oracle seed.  Embedded queries and random()
draws go through the supplied query oracle, in source order, exactly
once per dynamic evaluation.
"""

from __future__ import annotations

from . import nodes as n
from .errors import IterationLimitError, TypeMismatchError
from .values import Value, apply_binop, apply_builtin, apply_unop, check_value

DEFAULT_ITERATION_CAP = 10**6


class _Return(Exception):
    def __init__(self, value: Value):
        self.value = value


class _Exit(Exception):
    def __init__(self, label: str | None):
        self.label = label


class _Continue(Exception):
    def __init__(self, label: str | None):
        self.label = label


class _Budget:
    """Shared loop-iteration budget; guards non-terminating inputs."""

    def __init__(self, cap: int):
        self.remaining = cap

    def spend(self) -> None:
        self.remaining -= 1
        if self.remaining < 0:
            raise IterationLimitError("loop iteration cap exceeded")


def eval_expr(e: n.Expr, env: dict[str, Value], oracle) -> Value:
    """Shared expression evaluator (also used by the SSA/ANF/UDF stages)."""
    if isinstance(e, n.Literal):
        return e.value
    if isinstance(e, n.Var):
        return env[e.name]
    if isinstance(e, n.BinOp):
        return apply_binop(e.op, eval_expr(e.lhs, env, oracle), eval_expr(e.rhs, env, oracle))
    if isinstance(e, n.UnOp):
        return apply_unop(e.op, eval_expr(e.arg, env, oracle))
    if isinstance(e, n.Builtin):
        if e.name == "random":
            return oracle.next_random()
        return apply_builtin(e.name, [eval_expr(a, env, oracle) for a in e.args])
    if isinstance(e, n.EmbeddedQuery):
        return oracle.eval_query(e.query_id, [env[v] for v in e.free_vars])
    if isinstance(e, n.QueryCall):
        return oracle.eval_query(e.query_id, [eval_expr(a, env, oracle) for a in e.args])
    if isinstance(e, n.RowRead):
        return env[e.name]
    raise TypeError(f"not an expression node: {e!r}")


def interpret_ast(
    ast: n.FunctionAst,
    args: list[Value],
    oracle,
    iteration_cap: int = DEFAULT_ITERATION_CAP,
) -> Value:
    """Run ``ast`` on ``args``, answering queries through ``oracle``."""
    if len(args) != len(ast.params):
        raise TypeMismatchError(
            f"{ast.name}: expected {len(ast.params)} argument(s), got {len(args)}"
        )
    env: dict[str, Value] = {}
    var_types: dict[str, str] = {}
    for (name, tag), value in zip(ast.params, args):
        env[name] = check_value(value, tag, f"argument {name}")
        var_types[name] = tag

    budget = _Budget(iteration_cap)
    for d in ast.declarations:
        var_types[d.name] = d.type
        init = None if d.init is None else eval_expr(d.init, env, oracle)
        env[d.name] = check_value(init, d.type, f"declaration {d.name}")

    try:
        _exec_stmts(ast.body, env, var_types, oracle, budget)
    except _Return as r:
        return check_value(r.value, ast.return_type, f"{ast.name} result")
    raise TypeMismatchError(f"{ast.name}: control reached the end of the body without RETURN")


def _exec_stmts(stmts, env, var_types, oracle, budget) -> None:
    for s in stmts:
        _exec_stmt(s, env, var_types, oracle, budget)


def _exec_stmt(s: n.Statement, env, var_types, oracle, budget) -> None:
    if isinstance(s, n.Assign):
        value = eval_expr(s.expr, env, oracle)
        env[s.var] = check_value(value, var_types[s.var], f"assignment to {s.var}")
        return
    if isinstance(s, n.Return):
        raise _Return(eval_expr(s.expr, env, oracle))
    if isinstance(s, n.If):
        if eval_expr(s.cond, env, oracle) is True:
            _exec_stmts(s.then_branch, env, var_types, oracle, budget)
        else:
            _exec_stmts(s.else_branch, env, var_types, oracle, budget)
        return
    if isinstance(s, n.ForRange):
        lo = eval_expr(s.lo, env, oracle)
        hi = eval_expr(s.hi, env, oracle)
        if not isinstance(lo, int) or not isinstance(hi, int) \
                or isinstance(lo, bool) or isinstance(hi, bool):
            raise TypeMismatchError("FOR bounds must be non-null integers")
        var_types[s.var] = "int"
        i = lo
        while i <= hi:
            budget.spend()
            env[s.var] = i
            try:
                _exec_stmts(s.body, env, var_types, oracle, budget)
            except _Exit as e:
                if e.label is None or e.label == s.label:
                    break
                raise
            except _Continue as c:
                if not (c.label is None or c.label == s.label):
                    raise
            i += 1
        env.pop(s.var, None)
        del var_types[s.var]
        return
    if isinstance(s, n.While):
        while eval_expr(s.cond, env, oracle) is True:
            budget.spend()
            try:
                _exec_stmts(s.body, env, var_types, oracle, budget)
            except _Exit as e:
                if e.label is None or e.label == s.label:
                    break
                raise
            except _Continue as c:
                if not (c.label is None or c.label == s.label):
                    raise
        return
    if isinstance(s, n.Loop):
        while True:
            budget.spend()
            try:
                _exec_stmts(s.body, env, var_types, oracle, budget)
            except _Exit as e:
                if e.label is None or e.label == s.label:
                    break
                raise
            except _Continue as c:
                if not (c.label is None or c.label == s.label):
                    raise
        return
    if isinstance(s, n.Exit):
        if s.cond is None or eval_expr(s.cond, env, oracle) is True:
            raise _Exit(s.label)
        return
    if isinstance(s, n.Continue):
        raise _Continue(s.label)
    raise TypeError(f"not a statement node: {s!r}")
