"""Abstract syntax for the supported stored-function subset.

A parsed function is a ``FunctionAst``: parameters, declarations, a
statement tree, and the embedded SQL queries captured verbatim as opaque
``QueryTemplate`` objects.  ``pretty_print`` emits canonical source that
re-parses to a structurally identical AST.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .values import Value, render_value


# --- expressions -----------------------------------------------------------


class Expr:
    pass


@dataclass(eq=True)
class Literal(Expr):
    value: Value


@dataclass(eq=True)
class Var(Expr):
    name: str


@dataclass(eq=True)
class BinOp(Expr):
    op: str
    lhs: Expr
    rhs: Expr


@dataclass(eq=True)
class UnOp(Expr):
    op: str
    arg: Expr


@dataclass(eq=True)
class Builtin(Expr):
    name: str
    args: list[Expr]


@dataclass(eq=True)
class EmbeddedQuery(Expr):
    """One syntactic occurrence of an embedded SQL query.

    The query text lives in the function's template table under
    ``query_id``; ``free_vars`` lists the in-scope program variables whose
    names occur in that text, in first-occurrence order.
    """

    query_id: str
    free_vars: list[str]


@dataclass(eq=True)
class QueryCall(Expr):
    """Post-frontend form of EmbeddedQuery: the template's parameters are
    instantiated with explicit argument atoms instead of source names."""

    query_id: str
    args: list[Expr]


@dataclass(eq=True)
class RowRead(Expr):
    """A qualified read of one column of the current working row ``r``.

    Introduced when a worker body is adapted for the CTE template; the
    evaluator treats it as an environment lookup, the SQL renderers emit
    the dialect's qualified column reference.
    """

    name: str


# --- statements ------------------------------------------------------------


class Statement:
    pass


@dataclass(eq=True)
class Assign(Statement):
    var: str
    expr: Expr


@dataclass(eq=True)
class If(Statement):
    # ELSIF chains are parsed as nested If statements in the else branch.
    cond: Expr
    then_branch: list[Statement]
    else_branch: list[Statement]


@dataclass(eq=True)
class ForRange(Statement):
    var: str
    lo: Expr
    hi: Expr
    body: list[Statement]
    label: str | None = None


@dataclass(eq=True)
class While(Statement):
    cond: Expr
    body: list[Statement]
    label: str | None = None


@dataclass(eq=True)
class Loop(Statement):
    body: list[Statement]
    label: str | None = None


@dataclass(eq=True)
class Exit(Statement):
    label: str | None = None
    cond: Expr | None = None


@dataclass(eq=True)
class Continue(Statement):
    label: str | None = None


@dataclass(eq=True)
class Return(Statement):
    expr: Expr


# --- top level --------------------------------------------------------------


@dataclass(eq=True)
class QueryTemplate:
    id: str
    text: str
    params: list[str]
    result_type: str


@dataclass(eq=True)
class Declaration:
    name: str
    type: str
    init: Expr | None = None


@dataclass(eq=True)
class FunctionAst:
    name: str
    params: list[tuple[str, str]]  # (name, type tag)
    declarations: list[Declaration]
    body: list[Statement]
    return_type: str
    templates: dict[str, QueryTemplate] = field(default_factory=dict)

    def param_names(self) -> list[str]:
        return [n for n, _ in self.params]

    def param_types(self) -> dict[str, str]:
        return dict(self.params)


# --- pretty printer ---------------------------------------------------------

_PRECEDENCE = {
    "OR": 1,
    "AND": 2,
    "=": 4, "<>": 4, "<": 4, "<=": 4, ">": 4, ">=": 4,
    "+": 5, "-": 5, "||": 5,
    "*": 6, "/": 6, "%": 6,
}


def format_expr(e: Expr, templates: dict[str, QueryTemplate] | None = None) -> str:
    return _fmt(e, templates or {}, 0)


def _fmt(e: Expr, templates: dict[str, QueryTemplate], parent_prec: int) -> str:
    if isinstance(e, Literal):
        if isinstance(e.value, str):
            return "'" + e.value.replace("'", "''") + "'"
        return render_value(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, BinOp):
        prec = _PRECEDENCE[e.op]
        s = f"{_fmt(e.lhs, templates, prec)} {e.op} {_fmt(e.rhs, templates, prec + 1)}"
        return f"({s})" if prec < parent_prec else s
    if isinstance(e, UnOp):
        if e.op == "NOT":
            inner = _fmt(e.arg, templates, 3)
            return f"NOT {inner}" if parent_prec <= 3 else f"(NOT {inner})"
        return f"-{_fmt(e.arg, templates, 7)}"
    if isinstance(e, Builtin):
        if e.name == "random":
            return "random()"
        if e.name == "is_null":
            return f"{_fmt(e.args[0], templates, 7)} IS NULL"
        if e.name.startswith("cast_"):
            return f"CAST({_fmt(e.args[0], templates, 0)} AS {e.name.removeprefix('cast_')})"
        args = ", ".join(_fmt(a, templates, 0) for a in e.args)
        return f"{e.name}({args})"
    if isinstance(e, EmbeddedQuery):
        tpl = templates.get(e.query_id)
        text = tpl.text if tpl is not None else f"/* {e.query_id} */"
        return f"({text})"
    if isinstance(e, QueryCall):
        args = ", ".join(_fmt(a, templates, 0) for a in e.args)
        return f"({e.query_id}[{args}])"
    if isinstance(e, RowRead):
        return f"r.{e.name}"
    raise TypeError(f"not an expression node: {e!r}")


def pretty_print(ast: FunctionAst) -> str:
    """Emit canonical source for ``ast`` (re-parseable; round-trips)."""
    out: list[str] = []
    params = ", ".join(f"{n} {t}" for n, t in ast.params)
    out.append(f"CREATE FUNCTION {ast.name}({params})")
    out.append(f"RETURNS {ast.return_type} AS $$")
    if ast.declarations:
        out.append("DECLARE")
        for d in ast.declarations:
            if d.init is not None:
                out.append(f"  {d.name} {d.type} = {format_expr(d.init, ast.templates)};")
            else:
                out.append(f"  {d.name} {d.type};")
    out.append("BEGIN")
    _print_stmts(ast.body, ast.templates, out, 1)
    out.append("END;")
    out.append("$$ LANGUAGE PLPGSQL;")
    return "\n".join(out) + "\n"


def _print_stmts(stmts: list[Statement], templates, out: list[str], depth: int) -> None:
    pad = "  " * depth
    for s in stmts:
        if isinstance(s, Assign):
            out.append(f"{pad}{s.var} = {format_expr(s.expr, templates)};")
        elif isinstance(s, Return):
            out.append(f"{pad}RETURN {format_expr(s.expr, templates)};")
        elif isinstance(s, If):
            out.append(f"{pad}IF {format_expr(s.cond, templates)} THEN")
            _print_stmts(s.then_branch, templates, out, depth + 1)
            if s.else_branch:
                out.append(f"{pad}ELSE")
                _print_stmts(s.else_branch, templates, out, depth + 1)
            out.append(f"{pad}END IF;")
        elif isinstance(s, ForRange):
            if s.label:
                out.append(f"{pad}<<{s.label}>>")
            out.append(
                f"{pad}FOR {s.var} IN {format_expr(s.lo, templates)}"
                f"..{format_expr(s.hi, templates)} LOOP"
            )
            _print_stmts(s.body, templates, out, depth + 1)
            out.append(f"{pad}END LOOP;")
        elif isinstance(s, While):
            if s.label:
                out.append(f"{pad}<<{s.label}>>")
            out.append(f"{pad}WHILE {format_expr(s.cond, templates)} LOOP")
            _print_stmts(s.body, templates, out, depth + 1)
            out.append(f"{pad}END LOOP;")
        elif isinstance(s, Loop):
            if s.label:
                out.append(f"{pad}<<{s.label}>>")
            out.append(f"{pad}LOOP")
            _print_stmts(s.body, templates, out, depth + 1)
            out.append(f"{pad}END LOOP;")
        elif isinstance(s, Exit):
            text = f"{pad}EXIT"
            if s.label:
                text += f" {s.label}"
            if s.cond is not None:
                text += f" WHEN {format_expr(s.cond, templates)}"
            out.append(text + ";")
        elif isinstance(s, Continue):
            text = f"{pad}CONTINUE"
            if s.label:
                text += f" {s.label}"
            out.append(text + ";")
        else:
            raise TypeError(f"not a statement node: {s!r}")
