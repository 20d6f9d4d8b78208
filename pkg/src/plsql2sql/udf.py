"""Flatten the mutually recursive letrec functions into one direct
tail-recursive worker with a dispatch parameter, plus a wrapper that
supplies the initial call.

The worker's parameter list unifies every letrec function's parameters
(first-appearance order) and lifts the remaining free variables -- the
wrapper's own parameters -- as trailing parameters.  Every recursive call
passes the full unified list; slots the callee does not rebind are carried
through unchanged, which keeps the run-table width of the SQL stage fixed.
Dispatch constants are the small integers 1..k in letrec order; dumps
print them under their label names (L1, L2, ...).  With a single call
target the dispatch parameter and CASE are omitted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import nodes as n
from .anf import AnfExpr, AnfFunc, AnfIf, AnfProgram, Let, LetRec, Result, TailCall
from .errors import IterationLimitError, TypeMismatchError, UnsupportedConstructError
from .interp import DEFAULT_ITERATION_CAP, eval_expr
from .values import Value, check_value


# --- representation -----------------------------------------------------------


class UdfExpr:
    pass


@dataclass(eq=True)
class Case(UdfExpr):
    arms: list[tuple[n.Expr, UdfExpr]]
    default: UdfExpr | None


@dataclass(eq=True)
class LetChain(UdfExpr):
    bindings: list[tuple[str, n.Expr]]
    body: UdfExpr


@dataclass(eq=True)
class RecCall(UdfExpr):
    target: int | None  # dispatch constant; None when dispatch is absent
    args: list[n.Expr]  # always the full unified width


@dataclass(eq=True)
class BaseCase(UdfExpr):
    expr: n.Expr


@dataclass(eq=True)
class Udf:
    name: str  # wrapper name
    params: list[tuple[str, str]]  # wrapper (name, type tag)
    worker_name: str
    arm_names: list[str]  # dispatch labels in constant order (1..k)
    unified_params: list[str]
    initial_target: int | None
    initial_args: list[n.Expr]  # evaluated in wrapper scope
    body: UdfExpr
    return_type: str
    var_types: dict[str, str] = field(default_factory=dict)
    templates: dict[str, n.QueryTemplate] = field(default_factory=dict)
    has_entry_arm: bool = False

    @property
    def has_dispatch(self) -> bool:
        return len(self.arm_names) >= 2

    def worker_params(self) -> list[str]:
        return (["fn"] if self.has_dispatch else []) + list(self.unified_params)

    def dispatch_name(self, const: int | None) -> str:
        if const is None:
            return self.arm_names[0]
        return self.arm_names[const - 1]


# --- conversion ----------------------------------------------------------------


def _anf_uses(e: AnfExpr | n.Expr, acc: set[str]) -> None:
    if isinstance(e, n.Expr):
        from .ssa import _expr_reads  # same walker the lowering uses

        _expr_reads(e, acc)
        return
    if isinstance(e, Let):
        _anf_uses(e.value, acc)
        _anf_uses(e.body, acc)
    elif isinstance(e, LetRec):
        for f in e.funcs:
            _anf_uses(f.body, acc)
        _anf_uses(e.body, acc)
    elif isinstance(e, AnfIf):
        _anf_uses(e.cond, acc)
        _anf_uses(e.then_branch, acc)
        _anf_uses(e.else_branch, acc)
    elif isinstance(e, TailCall):
        for a in e.args:
            _anf_uses(a, acc)
    elif isinstance(e, Result):
        _anf_uses(e.expr, acc)


def _strip_letrec(e: AnfExpr) -> AnfExpr:
    while isinstance(e, LetRec):
        e = e.body
    return e


def _is_impure(e: n.Expr) -> bool:
    if isinstance(e, n.QueryCall):
        return True
    if isinstance(e, n.Builtin):
        return e.name == "random" or any(_is_impure(a) for a in e.args)
    if isinstance(e, n.BinOp):
        return _is_impure(e.lhs) or _is_impure(e.rhs)
    if isinstance(e, n.UnOp):
        return _is_impure(e.arg)
    return False


def _subst_vars(e: n.Expr, bindings: dict[str, n.Expr]) -> n.Expr:
    if isinstance(e, n.Var):
        return bindings.get(e.name, e)
    if isinstance(e, n.Literal):
        return e
    if isinstance(e, n.BinOp):
        return n.BinOp(e.op, _subst_vars(e.lhs, bindings), _subst_vars(e.rhs, bindings))
    if isinstance(e, n.UnOp):
        return n.UnOp(e.op, _subst_vars(e.arg, bindings))
    if isinstance(e, n.Builtin):
        return n.Builtin(e.name, [_subst_vars(a, bindings) for a in e.args])
    if isinstance(e, n.QueryCall):
        return n.QueryCall(e.query_id, [_subst_vars(a, bindings) for a in e.args])
    raise TypeError(f"not an expression node: {e!r}")


def defunctionalize(p: AnfProgram) -> Udf:
    """Flatten the letrec into one worker plus its wrapper."""
    funcs = p.functions()
    by_name = {f.name: f for f in funcs}
    core = _strip_letrec(p.body)

    entry_arm: AnfFunc | None = None
    if not isinstance(core, TailCall):
        # control flow before the first call target: keep the whole entry
        # region as an extra dispatch arm instead of a bare initial call
        entry_arm = AnfFunc("L0", [], core)

    arms: list[AnfFunc] = ([entry_arm] if entry_arm else []) + funcs
    if not arms:
        raise TypeMismatchError(f"{p.name}: nothing to compile")
    arm_names = [f.name for f in arms]
    arm_index = {name: i + 1 for i, name in enumerate(arm_names)}
    has_dispatch = len(arms) >= 2

    unified: list[str] = []
    for f in arms:
        for v in f.params:
            if v not in unified:
                unified.append(v)
    reads: set[str] = set()
    for f in arms:
        _anf_uses(f.body, reads)
    wrapper_params = list(p.params)
    lifted = [v for v in wrapper_params if v in reads]
    unified += [v for v in lifted if v not in unified]

    def tr(e: AnfExpr) -> UdfExpr:
        if isinstance(e, Let):
            bindings: list[tuple[str, n.Expr]] = []
            while isinstance(e, Let):
                bindings.append((e.var, e.value))
                e = e.body
            return LetChain(bindings, tr(e))
        if isinstance(e, LetRec):
            return tr(e.body)
        if isinstance(e, AnfIf):
            return Case([(e.cond, tr(e.then_branch))], tr(e.else_branch))
        if isinstance(e, TailCall):
            callee = by_name[e.fname]
            bound = dict(zip(callee.params, e.args))
            full = [bound.get(s, n.Var(s)) for s in unified]
            return RecCall(arm_index[e.fname] if has_dispatch else None, full)
        if isinstance(e, Result):
            return BaseCase(e.expr)
        raise TypeError(f"not an ANF expression: {e!r}")

    if has_dispatch:
        body: UdfExpr = Case(
            [(n.BinOp("=", n.Var("fn"), n.Literal(i + 1)), tr(f.body))
             for i, f in enumerate(arms)],
            None,
        )
    else:
        body = tr(arms[0].body)

    # the wrapper's initial call into the worker
    if entry_arm is not None:
        initial_target = arm_index["L0"] if has_dispatch else None
        initial_args: list[n.Expr] = [
            n.Var(s) if s in set(wrapper_params) else n.Literal(None) for s in unified
        ]
    else:
        assert isinstance(core, TailCall)
        initial_target = arm_index[core.fname] if has_dispatch else None
        initial_args = _fold_entry_bindings(p, core, by_name[core.fname], unified)

    var_types = dict(p.var_types)
    return Udf(
        name=p.name,
        params=[(v, var_types.get(v, "int")) for v in wrapper_params],
        worker_name=p.name + "*",
        arm_names=arm_names,
        unified_params=unified,
        initial_target=initial_target,
        initial_args=initial_args,
        body=body,
        return_type=p.return_type,
        var_types=var_types,
        templates=dict(p.templates),
        has_entry_arm=entry_arm is not None,
    )


def _fold_entry_bindings(p: AnfProgram, call: TailCall, callee: AnfFunc,
                         unified: list[str]) -> list[n.Expr]:
    """Fold entry-region let bindings into the initial call's arguments."""
    bindings: list[tuple[str, n.Expr]] = []
    probe = p.body
    while not isinstance(probe, TailCall):
        if isinstance(probe, LetRec):
            probe = probe.body
        elif isinstance(probe, Let):
            bindings.append((probe.var, probe.value))
            probe = probe.body
        else:
            raise AssertionError("entry core shape changed under us")

    bound = dict(zip(callee.params, call.args))
    args = [bound.get(s, n.Var(s)) for s in unified]

    substituted: dict[str, n.Expr] = {}
    for var, value in bindings:
        substituted[var] = _subst_vars(value, substituted)
    folded = [_subst_vars(a, substituted) for a in args]

    # side-effecting bindings must fold without duplicating or reordering
    # their oracle calls relative to the other stages
    impure_order = [var for var, value in bindings if _is_impure(_subst_vars(value, {}))]
    if impure_order:
        seen: list[str] = []

        def record(expr: n.Expr) -> None:
            if isinstance(expr, n.Var) and expr.name in impure_order:
                seen.append(expr.name)
            elif isinstance(expr, n.BinOp):
                record(expr.lhs), record(expr.rhs)
            elif isinstance(expr, n.UnOp):
                record(expr.arg)
            elif isinstance(expr, (n.Builtin, n.QueryCall)):
                for a in getattr(expr, "args", []):
                    record(a)

        for a in args:
            record(a)
        if seen != impure_order:
            raise UnsupportedConstructError(
                "side-effecting initialisation that cannot fold into the seed row"
            )
    return folded


# --- static checks ---------------------------------------------------------------


def check_udf(u: Udf) -> list[str]:
    """Dispatch totality and argument-width invariance (empty = ok)."""
    problems: list[str] = []
    width = len(u.unified_params)
    k = len(u.arm_names)

    def walk(e: UdfExpr) -> None:
        if isinstance(e, Case):
            for _, arm in e.arms:
                walk(arm)
            if e.default is not None:
                walk(e.default)
        elif isinstance(e, LetChain):
            walk(e.body)
        elif isinstance(e, RecCall):
            if len(e.args) != width:
                problems.append(f"recursive call width {len(e.args)} != unified width {width}")
            if u.has_dispatch:
                if e.target is None or not (1 <= e.target <= k):
                    problems.append(f"dispatch constant {e.target} out of range 1..{k}")
            elif e.target is not None:
                problems.append("dispatch constant present without a dispatch parameter")

    walk(u.body)
    if len(set(u.arm_names)) != k:
        problems.append("dispatch constants are not pairwise distinct")
    if len(u.initial_args) != width:
        problems.append(f"initial call width {len(u.initial_args)} != unified width {width}")
    return problems


# --- interpretation ---------------------------------------------------------------


def interpret_udf(
    u: Udf,
    args: list[Value],
    oracle,
    iteration_cap: int = DEFAULT_ITERATION_CAP,
) -> Value:
    """Evaluate wrapper + worker; recursive calls loop iteratively."""
    if len(args) != len(u.params):
        raise TypeMismatchError(f"{u.name}: expected {len(u.params)} argument(s)")
    wrapper_env: dict[str, Value] = {}
    for (name, tag), value in zip(u.params, args):
        wrapper_env[name] = check_value(value, tag, f"argument {name}")

    current = [eval_expr(a, wrapper_env, oracle) for a in u.initial_args]
    target = u.initial_target
    budget = iteration_cap
    while True:
        env = dict(zip(u.unified_params, current))
        if u.has_dispatch:
            env["fn"] = target
        outcome = _eval_body(u.body, env, oracle)
        if outcome[0] == "base":
            return check_value(outcome[1], u.return_type, f"{u.name} result")
        _, target, current = outcome
        budget -= 1
        if budget < 0:
            raise IterationLimitError("loop iteration cap exceeded")


def _eval_body(e: UdfExpr, env: dict[str, Value], oracle):
    while True:
        if isinstance(e, LetChain):
            env = dict(env)
            for var, value in e.bindings:
                env[var] = eval_expr(value, env, oracle)
            e = e.body
        elif isinstance(e, Case):
            for guard, arm in e.arms:
                if eval_expr(guard, env, oracle) is True:
                    e = arm
                    break
            else:
                if e.default is None:
                    raise TypeMismatchError("no dispatch arm matched")
                e = e.default
        elif isinstance(e, RecCall):
            return ("call", e.target, [eval_expr(a, env, oracle) for a in e.args])
        elif isinstance(e, BaseCase):
            return ("base", eval_expr(e.expr, env, oracle))
        else:
            raise TypeError(f"not a worker-body node: {e!r}")


# --- dump --------------------------------------------------------------------------


def dump_udf(u: Udf) -> str:
    params = ", ".join(name for name, _ in u.params)
    lines = [f"function {u.name}({params}) ="]
    init = ", ".join(n.format_expr(a) for a in u.initial_args)
    if u.has_dispatch:
        init = u.dispatch_name(u.initial_target) + (", " + init if init else "")
    lines.append(f"  {u.worker_name}({init})")
    lines.append("")
    lines.append(f"function {u.worker_name}({', '.join(u.worker_params())}) =")
    _dump_body(u, u.body, lines, 1)
    return "\n".join(lines) + "\n"


def _dump_body(u: Udf, e: UdfExpr, lines: list[str], depth: int) -> None:
    pad = "  " * depth
    if isinstance(e, Case):
        lines.append(f"{pad}case")
        for guard, arm in e.arms:
            guard_text = n.format_expr(guard)
            if u.has_dispatch and isinstance(guard, n.BinOp) and guard.lhs == n.Var("fn") \
                    and isinstance(guard.rhs, n.Literal):
                guard_text = f"fn = {u.dispatch_name(guard.rhs.value)}"
            lines.append(f"{pad}when {guard_text} then")
            _dump_body(u, arm, lines, depth + 1)
        if e.default is not None:
            lines.append(f"{pad}else")
            _dump_body(u, e.default, lines, depth + 1)
        lines.append(f"{pad}end")
        return
    if isinstance(e, LetChain):
        for i, (var, value) in enumerate(e.bindings):
            keyword = "let" if i == 0 else "in let"
            lines.append(f"{pad}{keyword} {var} = {n.format_expr(value)}")
        lines.append(f"{pad}in")
        _dump_body(u, e.body, lines, depth)
        return
    if isinstance(e, RecCall):
        args = ", ".join(n.format_expr(a) for a in e.args)
        if u.has_dispatch:
            args = u.dispatch_name(e.target) + (", " + args if args else "")
        lines.append(f"{pad}{u.worker_name}({args})")
        return
    if isinstance(e, BaseCase):
        lines.append(f"{pad}{n.format_expr(e.expr)}")
        return
    raise TypeError(f"not a worker-body node: {e!r}")
