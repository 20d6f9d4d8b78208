"""Lowering to static single assignment form with goto-based control flow.

Every structured construct (IF, FOR, WHILE, LOOP with EXIT/CONTINUE)
desugars to plain blocks ending in ``goto``/conditional ``goto``/``return``.
Construction works directly on the structured statement tree with
sealed-block phi insertion: loop heads open with placeholder phis for the
variables the loop mutates and are sealed once every back edge is known,
so no dominance-frontier pass is needed.

The variable environment maps source names to atoms (an SSA variable or a
literal), which performs copy/constant forwarding during construction:
only computed right-hand sides materialise as SSA assignments, and phi
operands may be literal atoms.  Versioned names use the base name plus a
numeric suffix; a variable that ends up with a single definition keeps its
bare name.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from . import nodes as n
from .errors import IterationLimitError, TypeMismatchError
from .interp import DEFAULT_ITERATION_CAP, eval_expr
from .values import Value, check_value


# --- program representation --------------------------------------------------


@dataclass(eq=True)
class Phi:
    target: str
    sources: list[tuple[str, n.Expr]]  # (predecessor label, atom)


@dataclass(eq=True)
class Goto:
    target: str


@dataclass(eq=True)
class CondGoto:
    cond: n.Expr
    then_target: str
    else_target: str


@dataclass(eq=True)
class SsaReturn:
    expr: n.Expr


Terminator = Goto | CondGoto | SsaReturn


@dataclass(eq=True)
class Block:
    label: str
    phis: list[Phi] = field(default_factory=list)
    assigns: list[tuple[str, n.Expr]] = field(default_factory=list)
    terminator: Terminator | None = None


@dataclass(eq=True)
class SsaProgram:
    name: str
    params: list[str]
    blocks: list[Block]  # entry first, then DFS preorder
    entry: str
    return_type: str
    var_types: dict[str, str] = field(default_factory=dict)
    var_order: list[str] = field(default_factory=list)
    templates: dict[str, n.QueryTemplate] = field(default_factory=dict)

    def block(self, label: str) -> Block:
        for b in self.blocks:
            if b.label == label:
                return b
        raise KeyError(label)

    def predecessors(self) -> dict[str, list[str]]:
        preds: dict[str, list[str]] = {b.label: [] for b in self.blocks}
        for b in self.blocks:
            for t in successor_labels(b):
                preds[t].append(b.label)
        return preds


def successor_labels(block: Block) -> list[str]:
    t = block.terminator
    if isinstance(t, Goto):
        return [t.target]
    if isinstance(t, CondGoto):
        return [t.then_target, t.else_target]
    return []


def compute_dominators(program: SsaProgram) -> dict[str, set[str]]:
    labels = [b.label for b in program.blocks]
    preds = program.predecessors()
    dom: dict[str, set[str]] = {lb: set(labels) for lb in labels}
    dom[program.entry] = {program.entry}
    changed = True
    while changed:
        changed = False
        for lb in labels:
            if lb == program.entry:
                continue
            ps = [p for p in preds[lb]]
            new = set(labels)
            for p in ps:
                new &= dom[p]
            new |= {lb}
            if not ps:
                new = {lb}
            if new != dom[lb]:
                dom[lb] = new
                changed = True
    return dom


def back_edge_targets(program: SsaProgram) -> set[str]:
    """Targets of back edges (u -> v where v dominates u): loop heads."""
    dom = compute_dominators(program)
    targets: set[str] = set()
    for b in program.blocks:
        for t in successor_labels(b):
            if t in dom[b.label]:
                targets.add(t)
    return targets


# --- lowering -----------------------------------------------------------------


def _expr_reads(e: n.Expr, acc: set[str]) -> None:
    if isinstance(e, n.Var):
        acc.add(e.name)
    elif isinstance(e, n.BinOp):
        _expr_reads(e.lhs, acc)
        _expr_reads(e.rhs, acc)
    elif isinstance(e, n.UnOp):
        _expr_reads(e.arg, acc)
    elif isinstance(e, n.Builtin):
        for a in e.args:
            _expr_reads(a, acc)
    elif isinstance(e, n.EmbeddedQuery):
        acc.update(e.free_vars)


def _assigned_vars(stmts: list[n.Statement], acc: set[str]) -> None:
    for s in stmts:
        if isinstance(s, n.Assign):
            acc.add(s.var)
        elif isinstance(s, n.If):
            _assigned_vars(s.then_branch, acc)
            _assigned_vars(s.else_branch, acc)
        elif isinstance(s, (n.ForRange, n.While, n.Loop)):
            _assigned_vars(s.body, acc)


def _stmt_reads(stmts: list[n.Statement], skip: n.Statement | None, acc: set[str]) -> None:
    for s in stmts:
        if s is skip:
            continue
        if isinstance(s, n.Assign):
            _expr_reads(s.expr, acc)
        elif isinstance(s, n.Return):
            _expr_reads(s.expr, acc)
        elif isinstance(s, n.If):
            _expr_reads(s.cond, acc)
            _stmt_reads(s.then_branch, skip, acc)
            _stmt_reads(s.else_branch, skip, acc)
        elif isinstance(s, n.ForRange):
            _expr_reads(s.lo, acc)
            _expr_reads(s.hi, acc)
            _stmt_reads(s.body, skip, acc)
        elif isinstance(s, n.While):
            _expr_reads(s.cond, acc)
            _stmt_reads(s.body, skip, acc)
        elif isinstance(s, n.Loop):
            _stmt_reads(s.body, skip, acc)
        elif isinstance(s, n.Exit) and s.cond is not None:
            _expr_reads(s.cond, acc)


def _reads_before_write(stmts: list[n.Statement], v: str) -> bool:
    """Conservative: may some path through ``stmts`` read v before writing it?"""
    read, _written = _rbw_seq(stmts, v)
    return read


def _rbw_seq(stmts: list[n.Statement], v: str) -> tuple[bool, bool]:
    for s in stmts:
        read, written = _rbw_stmt(s, v)
        if read:
            return True, False
        if written:
            return False, True
    return False, False


def _rbw_stmt(s: n.Statement, v: str) -> tuple[bool, bool]:
    def reads(e: n.Expr | None) -> bool:
        if e is None:
            return False
        acc: set[str] = set()
        _expr_reads(e, acc)
        return v in acc

    if isinstance(s, n.Assign):
        if reads(s.expr):
            return True, False
        return False, s.var == v
    if isinstance(s, n.Return):
        # path ends; "written" stops the scan for this path
        return reads(s.expr), True
    if isinstance(s, n.If):
        if reads(s.cond):
            return True, False
        r1, w1 = _rbw_seq(s.then_branch, v)
        r2, w2 = _rbw_seq(s.else_branch, v)
        if r1 or r2:
            return True, False
        return False, w1 and w2 and bool(s.else_branch)
    if isinstance(s, n.ForRange):
        if reads(s.lo) or reads(s.hi):
            return True, False
        r, _w = _rbw_seq(s.body, v)
        return r, False  # зеро iterations possible: never a definite write
    if isinstance(s, n.While):
        if reads(s.cond):
            return True, False
        r, _w = _rbw_seq(s.body, v)
        return r, False
    if isinstance(s, n.Loop):
        r, w = _rbw_seq(s.body, v)
        return r, w  # body runs at least once
    if isinstance(s, n.Exit):
        return reads(s.cond), s.cond is None  # unconditional EXIT ends the path
    if isinstance(s, n.Continue):
        return False, True  # path ends here
    raise TypeError(f"not a statement node: {s!r}")


@dataclass
class _LoopCtx:
    node: n.Statement
    label: str | None
    head: "_B"
    exit_block: "_B"
    phi_map: dict[str, Phi]
    counter_var: str | None = None
    counter_next: n.Expr | None = None
    exit_edges: list[tuple["_B", dict[str, n.Expr]]] = field(default_factory=list)


class _B:
    """Block under construction; labels are assigned at the end."""

    __slots__ = ("phis", "assigns", "terminator", "final_label")

    def __init__(self) -> None:
        self.phis: list[Phi] = []
        self.assigns: list[tuple[str, n.Expr]] = []
        self.terminator = None  # Goto/CondGoto targets hold _B refs while building
        self.final_label: str | None = None


class _Lowerer:
    def __init__(self, ast: n.FunctionAst):
        self.ast = ast
        self.blocks: list[_B] = []
        self.env: dict[str, n.Expr] = {}
        self.scope_order: list[str] = []
        self.base_types: dict[str, str] = {}
        self.has_real_def: set[str] = set()
        self.counters: dict[str, int] = {}
        self.used_names: set[str] = set()
        self.defs_per_base: dict[str, list[str]] = {}
        self.var_types: dict[str, str] = {}
        self.var_order: list[str] = []
        self.loop_stack: list[_LoopCtx] = []
        self.current: _B | None = None

    # -- naming --

    def fresh(self, base: str) -> str:
        k = self.counters.get(base, 0) + 1
        name = f"{base}_{k}"
        while name in self.used_names:
            k += 1
            name = f"{base}_{k}"
        self.counters[base] = k
        self.used_names.add(name)
        self.var_order.append(name)
        self.var_types[name] = self.base_types.get(base, "int")
        self.defs_per_base.setdefault(base, []).append(name)
        return name

    def new_block(self) -> _B:
        b = _B()
        self.blocks.append(b)
        return b

    # -- expression substitution --

    def subst(self, e: n.Expr) -> n.Expr:
        if isinstance(e, n.Literal):
            return e
        if isinstance(e, n.Var):
            return self.env[e.name]
        if isinstance(e, n.BinOp):
            return n.BinOp(e.op, self.subst(e.lhs), self.subst(e.rhs))
        if isinstance(e, n.UnOp):
            return n.UnOp(e.op, self.subst(e.arg))
        if isinstance(e, n.Builtin):
            return n.Builtin(e.name, [self.subst(a) for a in e.args])
        if isinstance(e, n.EmbeddedQuery):
            return n.QueryCall(e.query_id, [self.env[v] for v in e.free_vars])
        raise TypeError(f"not an expression node: {e!r}")

    @staticmethod
    def is_atom(e: n.Expr) -> bool:
        return isinstance(e, (n.Literal, n.Var))

    def materialize(self, base: str, e: n.Expr) -> n.Expr:
        """Bind a computed expression to a fresh version of ``base``."""
        assert self.current is not None
        name = self.fresh(base)
        self.current.assigns.append((name, e))
        return n.Var(name)

    # -- entry --

    def lower(self) -> SsaProgram:
        ast = self.ast
        for p, tag in ast.params:
            self.env[p] = n.Var(p)
            self.scope_order.append(p)
            self.base_types[p] = tag
            self.has_real_def.add(p)
            self.used_names.add(p)
            self.var_types[p] = tag
            self.var_order.append(p)
        for d in ast.declarations:
            self.scope_order.append(d.name)
            self.base_types[d.name] = d.type
            self.used_names.add(d.name)

        entry = self.new_block()
        self.current = entry
        for d in ast.declarations:
            if d.init is None:
                self.env[d.name] = n.Literal(None)
                continue
            rhs = self.subst(d.init)
            self.env[d.name] = rhs if self.is_atom(rhs) else self.materialize(d.name, rhs)
            self.has_real_def.add(d.name)

        self.lower_stmts(ast.body)
        if self.current is not None:
            # the parser guarantees every path returns
            raise TypeMismatchError(f"{ast.name}: a path misses RETURN after lowering")

        return self.finalize(entry)

    # -- statements --

    def lower_stmts(self, stmts: list[n.Statement]) -> None:
        for s in stmts:
            if self.current is None:
                return  # unreachable tail after RETURN/EXIT/CONTINUE
            self.lower_stmt(s)

    def lower_stmt(self, s: n.Statement) -> None:
        if isinstance(s, n.Assign):
            rhs = self.subst(s.expr)
            if self.is_atom(rhs):
                self.env[s.var] = rhs
            else:
                self.env[s.var] = self.materialize(s.var, rhs)
            self.has_real_def.add(s.var)
            return
        if isinstance(s, n.Return):
            assert self.current is not None
            self.current.terminator = SsaReturn(self.subst(s.expr))
            self.current = None
            return
        if isinstance(s, n.If):
            self.lower_if(s)
            return
        if isinstance(s, (n.ForRange, n.While, n.Loop)):
            self.lower_loop(s)
            return
        if isinstance(s, n.Exit):
            self.lower_exit(s)
            return
        if isinstance(s, n.Continue):
            self.lower_continue(s)
            return
        raise TypeError(f"not a statement node: {s!r}")

    def lower_if(self, s: n.If) -> None:
        assert self.current is not None
        cond = self.subst(s.cond)
        cond_block = self.current
        saved = dict(self.env)

        then_blk = self.new_block()
        if s.else_branch:
            else_blk = self.new_block()
            cond_block.terminator = CondGoto(cond, then_blk, else_blk)

            self.current, self.env = then_blk, dict(saved)
            self.lower_stmts(s.then_branch)
            then_end, then_env = self.current, dict(self.env)

            self.current, self.env = else_blk, dict(saved)
            self.lower_stmts(s.else_branch)
            else_end, else_env = self.current, dict(self.env)

            incoming = [(b, e) for b, e in ((then_end, then_env), (else_end, else_env))
                        if b is not None]
            if not incoming:
                self.current = None
                return
            if len(incoming) == 1:
                self.current, self.env = incoming[0][0], incoming[0][1]
                return
            join = self.new_block()
            for b, _ in incoming:
                b.terminator = Goto(join)
            self.merge_into(join, incoming)
            return

        # no ELSE: the false arm falls through to the join directly
        join = self.new_block()
        cond_block.terminator = CondGoto(cond, then_blk, join)
        self.current, self.env = then_blk, dict(saved)
        self.lower_stmts(s.then_branch)
        incoming = [(cond_block, saved)]
        if self.current is not None:
            self.current.terminator = Goto(join)
            incoming.append((self.current, dict(self.env)))
        self.merge_into(join, incoming)

    def merge_into(self, block: _B, incoming: list[tuple[_B, dict[str, n.Expr]]]) -> None:
        """Make ``block`` current, inserting phis where edge values differ."""
        env: dict[str, n.Expr] = {}
        for v in self.scope_order:
            atoms = [e[v] for _, e in incoming]
            if all(a == atoms[0] for a in atoms[1:]):
                env[v] = atoms[0]
            else:
                tgt = self.fresh(v)
                block.phis.append(Phi(tgt, [(b, e[v]) for b, e in incoming]))
                env[v] = n.Var(tgt)
                self.has_real_def.add(v)
        self.current, self.env = block, env

    def lower_loop(self, s: n.ForRange | n.While | n.Loop) -> None:
        assert self.current is not None
        assigned: set[str] = set()
        _assigned_vars(s.body, assigned)
        outside: set[str] = set()
        _stmt_reads(self.ast.body, s, outside)
        for d in self.ast.declarations:
            if d.init is not None:
                _expr_reads(d.init, outside)

        phi_vars = [
            v for v in self.scope_order
            if v in assigned
            and (v in self.has_real_def or _reads_before_write(s.body, v) or v in outside)
        ]

        # FOR bounds are evaluated once, before the head
        counter_var: str | None = None
        lo_atom = hi_atom = None
        if isinstance(s, n.ForRange):
            lo = self.subst(s.lo)
            lo_atom = lo if self.is_atom(lo) else self.materialize(f"{s.var}_lo", lo)
            hi = self.subst(s.hi)
            hi_atom = hi if self.is_atom(hi) else self.materialize(f"{s.var}_hi", hi)
            counter_var = s.var
            self.scope_order.append(s.var)
            self.base_types[s.var] = "int"
            self.used_names.add(s.var)

        pred = self.current
        head = self.new_block()
        pred.terminator = Goto(head)

        phi_map: dict[str, Phi] = {}
        for v in phi_vars:
            tgt = self.fresh(v)
            phi = Phi(tgt, [(pred, self.env[v])])
            head.phis.append(phi)
            phi_map[v] = phi
            self.env[v] = n.Var(tgt)
            self.has_real_def.add(v)
        if counter_var is not None:
            tgt = self.fresh(counter_var)
            phi = Phi(tgt, [(pred, lo_atom)])
            head.phis.append(phi)
            phi_map[counter_var] = phi
            self.env[counter_var] = n.Var(tgt)
            self.has_real_def.add(counter_var)

        exit_block = self.new_block()
        ctx = _LoopCtx(node=s, label=s.label, head=head, exit_block=exit_block,
                       phi_map=phi_map, counter_var=counter_var)
        self.loop_stack.append(ctx)

        if isinstance(s, n.ForRange):
            body_blk = self.new_block()
            head.terminator = CondGoto(
                n.BinOp("<=", self.env[s.var], hi_atom), body_blk, exit_block
            )
            ctx.exit_edges.append((head, dict(self.env)))
            self.current = body_blk
            # the counter increment goes right after the body's leading
            # straight-line assignments, so it dominates every back edge
            # (including CONTINUE) while plain reads keep seeing the phi
            split = 0
            while split < len(s.body) and isinstance(s.body[split], n.Assign):
                split += 1
            self.lower_stmts(s.body[:split])
            assert self.current is not None
            nxt = self.fresh(s.var)
            self.current.assigns.append((nxt, n.BinOp("+", self.env[s.var], n.Literal(1))))
            ctx.counter_next = n.Var(nxt)
            self.lower_stmts(s.body[split:])
        elif isinstance(s, n.While):
            body_blk = self.new_block()
            head.terminator = CondGoto(self.subst(s.cond), body_blk, exit_block)
            ctx.exit_edges.append((head, dict(self.env)))
            self.current = body_blk
            self.lower_stmts(s.body)
        else:
            # bare LOOP: the head is the body start; leaving happens via EXIT
            self.current = head
            self.lower_stmts(s.body)

        if self.current is not None:
            self.add_back_edge(ctx, self.current)
        self.loop_stack.pop()

        if counter_var is not None:
            self.scope_order.remove(counter_var)
            self.env.pop(counter_var, None)
            del self.base_types[counter_var]

        if not ctx.exit_edges:
            self.current = None  # loop never exits normally
            return
        pruned = [(b, {v: e[v] for v in self.scope_order}) for b, e in ctx.exit_edges]
        if len(pruned) == 1:
            b, e = pruned[0]
            self.current = exit_block
            self.env = dict(e)
            return
        self.merge_into(exit_block, pruned)

    def add_back_edge(self, ctx: _LoopCtx, pred: _B) -> None:
        for v, phi in ctx.phi_map.items():
            if v == ctx.counter_var:
                phi.sources.append((pred, ctx.counter_next))
            else:
                phi.sources.append((pred, self.env[v]))
        pred.terminator = Goto(ctx.head)
        self.current = None

    def find_loop(self, label: str | None) -> _LoopCtx:
        if label is None:
            return self.loop_stack[-1]
        for ctx in reversed(self.loop_stack):
            if ctx.label == label:
                return ctx
        raise TypeMismatchError(f"no enclosing loop labelled {label}")

    def lower_exit(self, s: n.Exit) -> None:
        assert self.current is not None
        ctx = self.find_loop(s.label)
        if s.cond is None:
            ctx.exit_edges.append((self.current, dict(self.env)))
            self.current.terminator = Goto(ctx.exit_block)
            self.current = None
            return
        cond = self.subst(s.cond)
        cont = self.new_block()
        ctx.exit_edges.append((self.current, dict(self.env)))
        self.current.terminator = CondGoto(cond, ctx.exit_block, cont)
        self.current = cont

    def lower_continue(self, s: n.Continue) -> None:
        assert self.current is not None
        ctx = self.find_loop(s.label)
        self.add_back_edge(ctx, self.current)

    # -- finalization --

    def finalize(self, entry: _B) -> SsaProgram:
        # depth-first preorder from the entry (then-arm first) gives the
        # source-order labels L0, L1, ...
        order: list[_B] = []
        seen: set[int] = set()
        stack = [entry]
        while stack:
            b = stack.pop()
            if id(b) in seen:
                continue
            seen.add(id(b))
            order.append(b)
            t = b.terminator
            if isinstance(t, Goto):
                stack.append(t.target)
            elif isinstance(t, CondGoto):
                stack.append(t.else_target)
                stack.append(t.then_target)
        for i, b in enumerate(order):
            b.final_label = f"L{i}"

        rename = self._single_def_renames()

        def fix_expr(e: n.Expr) -> n.Expr:
            if isinstance(e, n.Var):
                return n.Var(rename.get(e.name, e.name))
            if isinstance(e, n.Literal):
                return e
            if isinstance(e, n.BinOp):
                return n.BinOp(e.op, fix_expr(e.lhs), fix_expr(e.rhs))
            if isinstance(e, n.UnOp):
                return n.UnOp(e.op, fix_expr(e.arg))
            if isinstance(e, n.Builtin):
                return n.Builtin(e.name, [fix_expr(a) for a in e.args])
            if isinstance(e, n.QueryCall):
                return n.QueryCall(e.query_id, [fix_expr(a) for a in e.args])
            raise TypeError(f"not an expression node: {e!r}")

        blocks: list[Block] = []
        reachable_ids = seen
        for b in order:
            phis = [
                Phi(rename.get(p.target, p.target),
                    [(src.final_label, fix_expr(a)) for src, a in p.sources
                     if id(src) in reachable_ids])
                for p in b.phis
            ]
            assigns = [(rename.get(t, t), fix_expr(e)) for t, e in b.assigns]
            t = b.terminator
            if isinstance(t, Goto):
                term: Terminator = Goto(t.target.final_label)
            elif isinstance(t, CondGoto):
                term = CondGoto(fix_expr(t.cond), t.then_target.final_label,
                                t.else_target.final_label)
            elif isinstance(t, SsaReturn):
                term = SsaReturn(fix_expr(t.expr))
            else:
                raise TypeMismatchError("unterminated reachable block")
            blocks.append(Block(b.final_label, phis, assigns, term))

        var_types = {rename.get(v, v): t for v, t in self.var_types.items()}
        var_order = [rename.get(v, v) for v in self.var_order]
        return SsaProgram(
            name=self.ast.name,
            params=self.ast.param_names(),
            blocks=blocks,
            entry="L0",
            return_type=self.ast.return_type,
            var_types=var_types,
            var_order=var_order,
            templates=dict(self.ast.templates),
        )

    def _single_def_renames(self) -> dict[str, str]:
        renames: dict[str, str] = {}
        for base, defs in self.defs_per_base.items():
            if len(defs) == 1 and base not in self.ast.param_names():
                renames[defs[0]] = base
        return renames


def lower_to_ssa(ast: n.FunctionAst) -> SsaProgram:
    """Desugar all control flow to blocks with goto/cond-goto/return."""
    return _Lowerer(ast).lower()


# --- simplification -----------------------------------------------------------


def simplify_ssa(p: SsaProgram) -> SsaProgram:
    """Copy propagation, trivial-phi removal, unreachable-block removal.

    Observationally equivalent to the input; the entry block stays even
    when it only forwards, because loop-head phis need a materialised
    entry predecessor.
    """
    blocks = [replace(b, phis=[Phi(ph.target, list(ph.sources)) for ph in b.phis],
                      assigns=list(b.assigns)) for b in p.blocks]

    # drop unreachable blocks and phi sources from removed predecessors
    by_label = {b.label: b for b in blocks}
    reachable: set[str] = set()
    stack = [p.entry]
    while stack:
        lb = stack.pop()
        if lb in reachable:
            continue
        reachable.add(lb)
        stack.extend(successor_labels(by_label[lb]))
    blocks = [b for b in blocks if b.label in reachable]
    for b in blocks:
        for ph in b.phis:
            ph.sources = [(src, a) for src, a in ph.sources if src in reachable]

    # substitution map built from copies and trivial phis, applied to fixpoint
    subst: dict[str, n.Expr] = {}

    def resolve(e: n.Expr) -> n.Expr:
        while isinstance(e, n.Var) and e.name in subst:
            e = subst[e.name]
        if isinstance(e, (n.Var, n.Literal)):
            return e
        if isinstance(e, n.BinOp):
            return n.BinOp(e.op, resolve(e.lhs), resolve(e.rhs))
        if isinstance(e, n.UnOp):
            return n.UnOp(e.op, resolve(e.arg))
        if isinstance(e, n.Builtin):
            return n.Builtin(e.name, [resolve(a) for a in e.args])
        if isinstance(e, n.QueryCall):
            return n.QueryCall(e.query_id, [resolve(a) for a in e.args])
        raise TypeError(f"not an expression node: {e!r}")

    changed = True
    while changed:
        changed = False
        for b in blocks:
            kept_assigns = []
            for tgt, e in b.assigns:
                e = resolve(e)
                if isinstance(e, n.Var) or isinstance(e, n.Literal):
                    subst[tgt] = e
                    changed = True
                else:
                    kept_assigns.append((tgt, e))
            b.assigns = kept_assigns
            kept_phis = []
            for ph in b.phis:
                ph.sources = [(src, resolve(a)) for src, a in ph.sources]
                distinct = [a for _, a in ph.sources if a != n.Var(ph.target)]
                if distinct and all(a == distinct[0] for a in distinct):
                    subst[ph.target] = distinct[0]
                    changed = True
                else:
                    kept_phis.append(ph)
            b.phis = kept_phis

    for b in blocks:
        for ph in b.phis:
            ph.sources = [(src, resolve(a)) for src, a in ph.sources]
        b.assigns = [(t, resolve(e)) for t, e in b.assigns]
        t = b.terminator
        if isinstance(t, CondGoto):
            b.terminator = CondGoto(resolve(t.cond), t.then_target, t.else_target)
        elif isinstance(t, SsaReturn):
            b.terminator = SsaReturn(resolve(t.expr))

    defined = {ph.target for b in blocks for ph in b.phis}
    defined |= {t for b in blocks for t, _ in b.assigns}
    defined |= set(p.params)
    return SsaProgram(
        name=p.name,
        params=list(p.params),
        blocks=blocks,
        entry=p.entry,
        return_type=p.return_type,
        var_types={v: t for v, t in p.var_types.items() if v in defined},
        var_order=[v for v in p.var_order if v in defined],
        templates=dict(p.templates),
    )


# --- static checking ----------------------------------------------------------


def check_ssa(p: SsaProgram) -> list[str]:
    """Single-assignment, phi-placement, and dominance violations (empty = ok)."""
    problems: list[str] = []
    labels = {b.label for b in p.blocks}
    if p.entry not in labels:
        return [f"entry {p.entry} missing"]
    preds = p.predecessors()
    if preds[p.entry]:
        problems.append("entry block has predecessors")

    defs: dict[str, str] = {v: "<param>" for v in p.params}
    for b in p.blocks:
        for ph in b.phis:
            if ph.target in defs:
                problems.append(f"{ph.target} defined more than once")
            defs[ph.target] = b.label
        for tgt, _ in b.assigns:
            if tgt in defs:
                problems.append(f"{tgt} defined more than once")
            defs[tgt] = b.label

    for b in p.blocks:
        expected = preds[b.label]
        for ph in b.phis:
            got = [src for src, _ in ph.sources]
            if sorted(got) != sorted(expected):
                problems.append(
                    f"phi {ph.target} in {b.label}: sources {got} != predecessors {expected}"
                )

    dom = compute_dominators(p)

    def check_use(name: str, use_block: str, position: int, what: str) -> None:
        if name not in defs:
            problems.append(f"{what}: {name} is never defined")
            return
        def_block = defs[name]
        if def_block == "<param>":
            return
        if def_block == use_block:
            b = p.block(use_block)
            local = [ph.target for ph in b.phis] + [t for t, _ in b.assigns]
            if local.index(name) >= position:
                problems.append(f"{what}: {name} used before its definition in {use_block}")
            return
        if def_block not in dom[use_block]:
            problems.append(f"{what}: {name} (defined in {def_block}) does not dominate {use_block}")

    def uses_of(e: n.Expr) -> set[str]:
        acc: set[str] = set()

        def walk(x: n.Expr) -> None:
            if isinstance(x, n.Var):
                acc.add(x.name)
            elif isinstance(x, n.BinOp):
                walk(x.lhs), walk(x.rhs)
            elif isinstance(x, n.UnOp):
                walk(x.arg)
            elif isinstance(x, n.Builtin):
                for a in x.args:
                    walk(a)
            elif isinstance(x, n.QueryCall):
                for a in x.args:
                    walk(a)

        walk(e)
        return acc

    for b in p.blocks:
        n_phis = len(b.phis)
        for ph in b.phis:
            for src, atom in ph.sources:
                for name in uses_of(atom):
                    # a phi operand is used at the end of its predecessor
                    pred_b = p.block(src)
                    end = len(pred_b.phis) + len(pred_b.assigns)
                    check_use(name, src, end, f"phi {ph.target} operand from {src}")
        for i, (tgt, e) in enumerate(b.assigns):
            for name in uses_of(e):
                check_use(name, b.label, n_phis + i, f"assign {tgt} in {b.label}")
        t = b.terminator
        if t is None:
            problems.append(f"block {b.label} lacks a terminator")
            continue
        end = n_phis + len(b.assigns)
        if isinstance(t, CondGoto):
            for name in uses_of(t.cond):
                check_use(name, b.label, end, f"branch in {b.label}")
        elif isinstance(t, SsaReturn):
            for name in uses_of(t.expr):
                check_use(name, b.label, end, f"return in {b.label}")
    return problems


# --- interpretation -----------------------------------------------------------


def interpret_ssa(
    p: SsaProgram,
    args: list[Value],
    oracle,
    iteration_cap: int = DEFAULT_ITERATION_CAP,
) -> Value:
    """Execute the block program; must match interpret_ast on the source."""
    if len(args) != len(p.params):
        raise TypeMismatchError(f"{p.name}: expected {len(p.params)} argument(s)")
    env: dict[str, Value] = {}
    for name, value in zip(p.params, args):
        env[name] = check_value(value, p.var_types[name], f"argument {name}")

    by_label = {b.label: b for b in p.blocks}
    loop_heads = back_edge_targets(p)
    budget = iteration_cap
    block = by_label[p.entry]
    prev_label: str | None = None
    while True:
        if block.phis:
            staged = []
            for ph in block.phis:
                for src, atom in ph.sources:
                    if src == prev_label:
                        staged.append((ph.target, eval_expr(atom, env, oracle)))
                        break
                else:
                    raise TypeMismatchError(
                        f"phi {ph.target}: no source for predecessor {prev_label}"
                    )
            for tgt, v in staged:  # parallel assignment semantics
                env[tgt] = v
        for tgt, e in block.assigns:
            env[tgt] = eval_expr(e, env, oracle)
        t = block.terminator
        if isinstance(t, SsaReturn):
            value = eval_expr(t.expr, env, oracle)
            return check_value(value, p.return_type, f"{p.name} result")
        if isinstance(t, Goto):
            target = t.target
        else:
            assert isinstance(t, CondGoto)
            target = t.then_target if eval_expr(t.cond, env, oracle) is True else t.else_target
        if target in loop_heads:
            budget -= 1
            if budget < 0:
                raise IterationLimitError("loop iteration cap exceeded")
        prev_label = block.label
        block = by_label[target]


# --- dump ----------------------------------------------------------------------


def dump_ssa(p: SsaProgram) -> str:
    """Textual form: one label per block, phis first, then assignments."""
    lines = [f"function {p.name}({', '.join(p.params)})", "{"]
    for b in p.blocks:
        prefix = f"  {b.label}: "
        pad = " " * len(prefix)
        parts: list[str] = []
        for ph in b.phis:
            srcs = ", ".join(f"{src}: {n.format_expr(a)}" for src, a in ph.sources)
            parts.append(f"{ph.target} <- phi({srcs})")
        for tgt, e in b.assigns:
            parts.append(f"{tgt} <- {n.format_expr(e)}")
        t = b.terminator
        if isinstance(t, Goto):
            parts.append(f"goto {t.target}")
        elif isinstance(t, CondGoto):
            parts.append(
                f"if {n.format_expr(t.cond)} then goto {t.then_target} else goto {t.else_target}"
            )
        elif isinstance(t, SsaReturn):
            parts.append(f"return {n.format_expr(t.expr)}")
        for i, text in enumerate(parts):
            lines.append((prefix if i == 0 else pad) + text)
    lines.append("}")
    return "\n".join(lines) + "\n"
