"""SSA to administrative normal form: labels become letrec-bound functions,
gotos become tail calls, phi-bound variables become parameters.

A reachable non-entry block becomes a letrec function when it carries
computation (phis or assignments) or is a back-edge target; pure control
blocks (a bare return or goto) are inlined at their reference sites.
Functions nest by dominance: each one is bound inside the letrec of its
nearest function-block dominator.  Free SSA locals are lambda-lifted into
explicit parameters; the enclosing function's own parameters (win, loose,
... in the running examples) stay free until the defunctionalization step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import nodes as n
from .errors import IterationLimitError, TypeMismatchError
from .interp import DEFAULT_ITERATION_CAP, eval_expr
from .ssa import (
    Block,
    CondGoto,
    Goto,
    SsaProgram,
    SsaReturn,
    back_edge_targets,
    compute_dominators,
    successor_labels,
)
from .values import Value, check_value


# --- representation -----------------------------------------------------------


class AnfExpr:
    pass


@dataclass(eq=True)
class Let(AnfExpr):
    var: str
    value: object  # n.Expr normally; AnfExpr only in hand-built (invalid) trees
    body: AnfExpr


@dataclass(eq=True)
class AnfFunc:
    name: str
    params: list[str]
    body: AnfExpr


@dataclass(eq=True)
class LetRec(AnfExpr):
    funcs: list[AnfFunc]
    body: AnfExpr


@dataclass(eq=True)
class AnfIf(AnfExpr):
    cond: n.Expr
    then_branch: AnfExpr
    else_branch: AnfExpr


@dataclass(eq=True)
class TailCall(AnfExpr):
    fname: str
    args: list[n.Expr]


@dataclass(eq=True)
class Result(AnfExpr):
    expr: n.Expr


@dataclass(eq=True)
class AnfProgram:
    name: str
    params: list[str]
    body: AnfExpr
    return_type: str
    var_types: dict[str, str] = field(default_factory=dict)
    templates: dict[str, n.QueryTemplate] = field(default_factory=dict)

    def functions(self) -> list[AnfFunc]:
        """All letrec-bound functions, outermost first (definition order)."""
        out: list[AnfFunc] = []

        def walk(e: AnfExpr) -> None:
            if isinstance(e, LetRec):
                for f in e.funcs:
                    out.append(f)
                for f in e.funcs:
                    walk(f.body)
                walk(e.body)
            elif isinstance(e, Let):
                if isinstance(e.value, AnfExpr):
                    walk(e.value)
                walk(e.body)
            elif isinstance(e, AnfIf):
                walk(e.then_branch)
                walk(e.else_branch)

        walk(self.body)
        return out


# --- conversion ----------------------------------------------------------------


def _expr_uses(e: n.Expr, acc: set[str]) -> None:
    if isinstance(e, n.Var):
        acc.add(e.name)
    elif isinstance(e, n.BinOp):
        _expr_uses(e.lhs, acc)
        _expr_uses(e.rhs, acc)
    elif isinstance(e, n.UnOp):
        _expr_uses(e.arg, acc)
    elif isinstance(e, n.Builtin):
        for a in e.args:
            _expr_uses(a, acc)
    elif isinstance(e, n.QueryCall):
        for a in e.args:
            _expr_uses(a, acc)


class _Converter:
    def __init__(self, program: SsaProgram):
        self.p = program
        self.by_label = {b.label: b for b in program.blocks}
        self.preds = program.predecessors()
        self.heads = back_edge_targets(program)
        self.fn_labels = [
            b.label
            for b in program.blocks
            if b.label != program.entry
            and (b.phis or b.assigns or b.label in self.heads)
        ]
        self.fn_set = set(self.fn_labels)
        self.free_locals = self._compute_free_locals()
        order_index = {v: i for i, v in enumerate(program.var_order)}
        for lb in self.fn_labels:
            self.free_locals[lb] = sorted(self.free_locals[lb], key=lambda v: order_index[v])

    def _region(self, start: str) -> list[str]:
        """``start`` plus the pure blocks its translation inlines."""
        region = [start]
        stack = list(successor_labels(self.by_label[start]))
        seen = {start}
        while stack:
            lb = stack.pop()
            if lb in seen or lb in self.fn_set:
                continue
            seen.add(lb)
            region.append(lb)
            stack.extend(successor_labels(self.by_label[lb]))
        return region

    def _compute_free_locals(self) -> dict[str, set[str]]:
        """Lambda lifting: SSA locals each function needs from its callers.

        Fixpoint over call edges because a function must also receive
        whatever its callees expect beyond their phi parameters.
        """
        params = set(self.p.params)
        raw_uses: dict[str, set[str]] = {}
        defines: dict[str, set[str]] = {}
        calls: dict[str, set[str]] = {}
        regions = {lb: self._region(lb) for lb in self.fn_labels}

        for lb in self.fn_labels:
            uses: set[str] = set()
            defs: set[str] = set()
            callees: set[str] = set()
            for rl in regions[lb]:
                b = self.by_label[rl]
                for ph in b.phis:
                    defs.add(ph.target)
                for tgt, e in b.assigns:
                    defs.add(tgt)
                    _expr_uses(e, uses)
                t = b.terminator
                if isinstance(t, CondGoto):
                    _expr_uses(t.cond, uses)
                elif isinstance(t, SsaReturn):
                    _expr_uses(t.expr, uses)
                for succ in successor_labels(b):
                    if succ in self.fn_set:
                        callees.add(succ)
                        for ph in self.by_label[succ].phis:
                            for src, atom in ph.sources:
                                if src == rl:
                                    _expr_uses(atom, uses)
            raw_uses[lb] = uses - params
            defines[lb] = defs
            calls[lb] = callees

        free = {lb: raw_uses[lb] - defines[lb] for lb in self.fn_labels}
        changed = True
        while changed:
            changed = False
            for lb in self.fn_labels:
                for callee in calls[lb]:
                    extra = free[callee] - defines[lb] - free[lb]
                    if extra:
                        free[lb] |= extra
                        changed = True
        return free

    def fn_params(self, label: str) -> list[str]:
        block = self.by_label[label]
        phi_params = [ph.target for ph in block.phis]
        return phi_params + [v for v in self.free_locals[label] if v not in phi_params]

    def call_args(self, callee: str, from_label: str) -> list[n.Expr]:
        block = self.by_label[callee]
        args: list[n.Expr] = []
        for ph in block.phis:
            for src, atom in ph.sources:
                if src == from_label:
                    args.append(atom)
                    break
            else:
                raise TypeMismatchError(
                    f"phi {ph.target} in {callee} has no source for predecessor {from_label}"
                )
        phi_targets = {ph.target for ph in block.phis}
        args.extend(n.Var(v) for v in self.free_locals[callee] if v not in phi_targets)
        return args

    def translate_tail(self, label: str) -> AnfExpr:
        """Translate the code a jump to ``label`` runs, inlining pure blocks."""
        if label in self.fn_set:
            raise AssertionError("function targets are handled at the jump site")
        return self.translate_block(label)

    def translate_block(self, label: str) -> AnfExpr:
        block = self.by_label[label]
        tail = self.translate_terminator(block)
        expr = tail
        for tgt, e in reversed(block.assigns):
            expr = Let(tgt, e, expr)
        return expr

    def translate_terminator(self, block: Block) -> AnfExpr:
        t = block.terminator
        if isinstance(t, SsaReturn):
            return Result(t.expr)
        if isinstance(t, Goto):
            return self.jump(t.target, block.label)
        assert isinstance(t, CondGoto)
        return AnfIf(
            t.cond,
            self.jump(t.then_target, block.label),
            self.jump(t.else_target, block.label),
        )

    def jump(self, target: str, from_label: str) -> AnfExpr:
        if target in self.fn_set:
            return TailCall(target, self.call_args(target, from_label))
        return self.translate_block(target)

    def convert(self) -> AnfProgram:
        dom = compute_dominators(self.p)

        def idom(label: str) -> str | None:
            strict = dom[label] - {label}
            if not strict:
                return None
            return max(strict, key=lambda d: len(dom[d]))

        parent: dict[str, str | None] = {}
        for lb in self.fn_labels:
            d = idom(lb)
            while d is not None and d not in self.fn_set:
                d = idom(d)
            parent[lb] = d

        children: dict[str | None, list[str]] = {None: []}
        for lb in self.fn_labels:
            children.setdefault(parent[lb], []).append(lb)

        def build_fn(label: str) -> AnfFunc:
            body = self.translate_block(label)
            kids = children.get(label, [])
            if kids:
                body = LetRec([build_fn(k) for k in kids], body)
            return AnfFunc(label, self.fn_params(label), body)

        outer = self.translate_block(self.p.entry)
        top = children.get(None, [])
        if top:
            outer_body: AnfExpr = LetRec([build_fn(k) for k in top], outer)
        else:
            outer_body = outer
        return AnfProgram(
            name=self.p.name,
            params=list(self.p.params),
            body=outer_body,
            return_type=self.p.return_type,
            var_types=dict(self.p.var_types),
            templates=dict(self.p.templates),
        )


def ssa_to_anf(program: SsaProgram) -> AnfProgram:
    """Translate a checked SSA program into a tail-recursive letrec form."""
    return _Converter(program).convert()


# --- tail-position checking -----------------------------------------------------


def check_tail_positions(p: AnfProgram) -> list[str]:
    """Empty list iff every TailCall is syntactically tail-positioned."""
    violations: list[str] = []

    def walk(e: AnfExpr | n.Expr, tail: bool, where: str) -> None:
        if isinstance(e, TailCall):
            if not tail:
                violations.append(f"call to {e.fname} in non-tail position ({where})")
            for a in e.args:
                walk(a, False, f"argument of call to {e.fname}")
            return
        if isinstance(e, Let):
            walk(e.value, False, f"binding of {e.var}")
            walk(e.body, tail, where)
            return
        if isinstance(e, LetRec):
            for f in e.funcs:
                walk(f.body, True, f"body of {f.name}")
            walk(e.body, tail, where)
            return
        if isinstance(e, AnfIf):
            walk(e.cond, False, "condition")
            walk(e.then_branch, tail, where)
            walk(e.else_branch, tail, where)
            return
        if isinstance(e, Result):
            walk(e.expr, False, "result expression")
            return
        # plain scalar expressions cannot contain calls

    walk(p.body, True, "program body")
    return violations


# --- interpretation --------------------------------------------------------------


@dataclass
class AnfCounters:
    """Instrumentation for the row-accounting and O(1)-control properties."""

    calls: int = 0
    max_depth: int = 0


def interpret_anf(
    p: AnfProgram,
    args: list[Value],
    oracle,
    iteration_cap: int = DEFAULT_ITERATION_CAP,
    counters: AnfCounters | None = None,
) -> Value:
    """Evaluate the program; tail calls run iteratively (bounded stack)."""
    if len(args) != len(p.params):
        raise TypeMismatchError(f"{p.name}: expected {len(p.params)} argument(s)")
    base: dict[str, Value] = {}
    for name, value in zip(p.params, args):
        base[name] = check_value(value, p.var_types.get(name, "int"), f"argument {name}")

    funcs = {f.name: f for f in p.functions()}
    budget = iteration_cap
    depth = 1
    expr: AnfExpr = p.body
    env = dict(base)
    while True:
        if isinstance(expr, Let):
            env = dict(env)
            env[expr.var] = eval_expr(expr.value, env, oracle)
            expr = expr.body
        elif isinstance(expr, LetRec):
            expr = expr.body
        elif isinstance(expr, AnfIf):
            expr = expr.then_branch if eval_expr(expr.cond, env, oracle) is True \
                else expr.else_branch
        elif isinstance(expr, TailCall):
            budget -= 1
            if budget < 0:
                raise IterationLimitError("loop iteration cap exceeded")
            if counters is not None:
                counters.calls += 1
                counters.max_depth = max(counters.max_depth, depth)
            fn = funcs[expr.fname]
            values = [eval_expr(a, env, oracle) for a in expr.args]
            env = dict(base)
            env.update(zip(fn.params, values))
            expr = fn.body
        elif isinstance(expr, Result):
            value = eval_expr(expr.expr, env, oracle)
            return check_value(value, p.return_type, f"{p.name} result")
        else:
            raise TypeError(f"not an ANF expression: {expr!r}")


# --- dump -------------------------------------------------------------------------


def dump_anf(p: AnfProgram) -> str:
    lines = [f"function {p.name}({', '.join(p.params)}) ="]
    _dump(p.body, lines, 1, first_in_chain=True)
    return "\n".join(lines) + "\n"


def _dump(e: AnfExpr, lines: list[str], depth: int, first_in_chain: bool) -> None:
    pad = "  " * depth
    if isinstance(e, LetRec):
        for f in e.funcs:
            lines.append(f"{pad}letrec {f.name}({', '.join(f.params)}) =")
            _dump(f.body, lines, depth + 1, True)
        lines.append(f"{pad}in")
        _dump(e.body, lines, depth, True)
        return
    if isinstance(e, Let):
        keyword = "let" if first_in_chain else "in let"
        value = n.format_expr(e.value) if isinstance(e.value, n.Expr) else "<anf-expr>"
        lines.append(f"{pad}{keyword} {e.var} = {value}")
        _dump(e.body, lines, depth, False)
        return
    if isinstance(e, AnfIf):
        prefix = "" if first_in_chain else "in "
        lines.append(f"{pad}{prefix}if {n.format_expr(e.cond)}")
        lines.append(f"{pad}then")
        _dump(e.then_branch, lines, depth + 1, True)
        lines.append(f"{pad}else")
        _dump(e.else_branch, lines, depth + 1, True)
        return
    if isinstance(e, TailCall):
        prefix = "" if first_in_chain else "in "
        args = ", ".join(n.format_expr(a) for a in e.args)
        lines.append(f"{pad}{prefix}{e.fname}({args})")
        return
    if isinstance(e, Result):
        prefix = "" if first_in_chain else "in "
        lines.append(f"{pad}{prefix}{n.format_expr(e.expr)}")
        return
    raise TypeError(f"not an ANF expression: {e!r}")
