"""Emit pure SQL from a defunctionalized worker.

The worker body is adapted by replacing its leaves with row construction
(a recursive call becomes ``ROW(true, ROW(fn, args...), NULL)``, a base
case becomes ``ROW(false, NULL, v)``) and rewriting every unified-parameter
reference into a qualified read of the working row ``r``.  The adapted
body is then spliced into the ``WITH RECURSIVE`` template: a seed row for
the original invocation, a step arm guarded by ``r."call?"``, and a final
extraction guarded by ``NOT r."call?"``.  ``iterate`` mode swaps the
keyword to ``WITH ITERATE`` and changes nothing else.

Dialects:

* ``postgres``: let chains render as ``LEFT JOIN LATERAL`` chains and
  coord values as ``ROW(x, y)`` composites.
* ``sqlite``: no ``LATERAL`` exists, so each let binding becomes one
  enclosing derived-table layer, row construction distributes over the
  output columns (one ``CASE`` per column), and coord columns flatten into
  ``_x``/``_y`` integer pairs.

Output is deterministic: byte-identical text for identical inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from . import nodes as n
from .errors import TypeMismatchError, UnsupportedCombinationError
from .udf import BaseCase, Case, LetChain, RecCall, Udf, UdfExpr

DIALECTS = ("postgres", "sqlite")
MODES = ("recursive", "iterate")

_PG_TYPES = {"int": "int", "float": "float8", "text": "text", "bool": "boolean", "coord": "coord"}
_LITE_TYPES = {"int": "INTEGER", "float": "REAL", "text": "TEXT", "bool": "INTEGER"}

# one uniform draw in [0, 1); sqlite's random() yields a signed 64-bit int
_LITE_RANDOM = "((random() / 18446744073709551616.0) + 0.5)"


@dataclass(eq=True)
class SqlQuery:
    text: str
    dialect: str
    mode: str
    result_type: str
    udf: Udf


# --- body adaptation -----------------------------------------------------------


def adapt_body(u: Udf) -> UdfExpr:
    """Rewrite unified-parameter references into working-row reads.

    The RecCall/BaseCase leaves stay in place; the renderers (and the CTE
    simulator) give them their row-construction meaning.
    """
    params = set(u.unified_params)

    def fix(e: n.Expr) -> n.Expr:
        if isinstance(e, n.Var):
            return n.RowRead(e.name) if e.name in params else e
        if isinstance(e, (n.Literal, n.RowRead)):
            return e
        if isinstance(e, n.BinOp):
            return n.BinOp(e.op, fix(e.lhs), fix(e.rhs))
        if isinstance(e, n.UnOp):
            return n.UnOp(e.op, fix(e.arg))
        if isinstance(e, n.Builtin):
            return n.Builtin(e.name, [fix(a) for a in e.args])
        if isinstance(e, n.QueryCall):
            return n.QueryCall(e.query_id, [fix(a) for a in e.args])
        raise TypeError(f"not an expression node: {e!r}")

    def walk(e: UdfExpr) -> UdfExpr:
        if isinstance(e, Case):
            return Case([(fix(g), walk(a)) for g, a in e.arms],
                        None if e.default is None else walk(e.default))
        if isinstance(e, LetChain):
            return LetChain([(v, fix(x)) for v, x in e.bindings], walk(e.body))
        if isinstance(e, RecCall):
            return RecCall(e.target, [fix(a) for a in e.args])
        if isinstance(e, BaseCase):
            return BaseCase(fix(e.expr))
        raise TypeError(f"not a worker-body node: {e!r}")

    return walk(u.body)


# --- scalar rendering ------------------------------------------------------------


@dataclass
class _Ctx:
    dialect: str
    udf: Udf
    placeholders: bool = False  # render wrapper parameters as :name
    coord_flat: set[str] = field(default_factory=set)  # names carried as _x/_y pairs

    def type_name(self, tag: str) -> str:
        if self.dialect == "postgres":
            return _PG_TYPES[tag]
        return _LITE_TYPES[tag]


_PREC = {
    "OR": 1, "AND": 2,
    "=": 4, "<>": 4, "<": 4, "<=": 4, ">": 4, ">=": 4,
    "+": 5, "-": 5, "||": 5,
    "*": 6, "/": 6, "%": 6,
}


def _tag_of(e: n.Expr, ctx: _Ctx) -> str | None:
    if isinstance(e, n.Literal):
        if isinstance(e.value, tuple):
            return "coord"
        return None
    if isinstance(e, (n.Var, n.RowRead)):
        return ctx.udf.var_types.get(e.name)
    if isinstance(e, n.QueryCall):
        tpl = ctx.udf.templates.get(e.query_id)
        return tpl.result_type if tpl else None
    return None


def _render_literal(v, ctx: _Ctx) -> str:
    if v is None:
        return "NULL"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        if ctx.dialect == "postgres":
            return f"ROW({v[0]}, {v[1]})"
        return f"coord({v[0]}, {v[1]})"
    if isinstance(v, str):
        return "'" + v.replace("'", "''") + "'"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coord_part(e: n.Expr, axis: str, ctx: _Ctx) -> str:
    """The _x/_y component of a coord-valued expression."""
    if isinstance(e, n.Literal) and isinstance(e.value, tuple):
        return str(e.value[0] if axis == "x" else e.value[1])
    if isinstance(e, n.RowRead) and e.name in ctx.coord_flat:
        return f"r.{e.name}_{axis}" if ctx.dialect == "postgres" else f"{e.name}_{axis}"
    if isinstance(e, n.Var) and e.name in ctx.coord_flat:
        base = f":{e.name}" if ctx.placeholders else e.name
        return f"{base}_{axis}"
    return f"coord_{axis}({_render(e, ctx, 0)})"


def _render(e: n.Expr, ctx: _Ctx, parent_prec: int) -> str:
    if isinstance(e, n.Literal):
        return _render_literal(e.value, ctx)
    if isinstance(e, n.Var):
        if e.name in ctx.coord_flat and ctx.dialect == "sqlite":
            return f"coord({_coord_part(e, 'x', ctx)}, {_coord_part(e, 'y', ctx)})"
        return f":{e.name}" if ctx.placeholders and _is_wrapper_param(e.name, ctx) else e.name
    if isinstance(e, n.RowRead):
        if e.name in ctx.coord_flat and ctx.dialect == "sqlite":
            return f"coord({e.name}_x, {e.name}_y)"
        return f"r.{e.name}" if ctx.dialect == "postgres" else e.name
    if isinstance(e, n.BinOp):
        prec = _PREC[e.op]
        if ctx.dialect == "sqlite" and e.op in ("=", "<>") \
                and (_tag_of(e.lhs, ctx) == "coord" or _tag_of(e.rhs, ctx) == "coord"):
            lx, ly = _coord_part(e.lhs, "x", ctx), _coord_part(e.lhs, "y", ctx)
            rx, ry = _coord_part(e.rhs, "x", ctx), _coord_part(e.rhs, "y", ctx)
            joiner = "AND" if e.op == "=" else "OR"
            text = f"{lx} {e.op} {rx} {joiner} {ly} {e.op} {ry}"
            return f"({text})" if prec < parent_prec or True else text
        text = f"{_render(e.lhs, ctx, prec)} {e.op} {_render(e.rhs, ctx, prec + 1)}"
        return f"({text})" if prec < parent_prec else text
    if isinstance(e, n.UnOp):
        if e.op == "NOT":
            inner = _render(e.arg, ctx, 3)
            return f"NOT {inner}" if parent_prec <= 3 else f"(NOT {inner})"
        return f"-{_render(e.arg, ctx, 7)}"
    if isinstance(e, n.Builtin):
        if e.name == "random":
            return "random()" if ctx.dialect == "postgres" else _LITE_RANDOM
        if e.name == "is_null":
            return f"({_render(e.args[0], ctx, 0)} IS NULL)"
        if e.name.startswith("cast_"):
            tag = e.name.removeprefix("cast_")
            return f"CAST({_render(e.args[0], ctx, 0)} AS {ctx.type_name(tag)})"
        args = ", ".join(_render(a, ctx, 0) for a in e.args)
        return f"{e.name}({args})"
    if isinstance(e, n.QueryCall):
        return f"({_instantiate_template(e, ctx)})"
    raise TypeError(f"not an expression node: {e!r}")


def _is_wrapper_param(name: str, ctx: _Ctx) -> bool:
    return any(name == p for p, _ in ctx.udf.params)


def _instantiate_template(e: n.QueryCall, ctx: _Ctx) -> str:
    """Splice rendered argument atoms into the opaque query text.

    Replacement uses the same scan the parser used for free-variable
    detection: whole identifiers only, never behind a qualifying dot,
    never inside string literals or comments.
    """
    tpl = ctx.udf.templates[e.query_id]
    rendered = {p: _render(a, ctx, 7) for p, a in zip(tpl.params, e.args)}
    text = tpl.text
    out: list[str] = []
    pos = 0
    import re

    ident = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
    while pos < len(text):
        c = text[pos]
        if c == "'":
            end = pos + 1
            while end < len(text):
                if text[end] == "'":
                    if text.startswith("''", end):
                        end += 2
                        continue
                    end += 1
                    break
                end += 1
            out.append(text[pos:end])
            pos = end
            continue
        if text.startswith("--", pos):
            nl = text.find("\n", pos)
            end = len(text) if nl < 0 else nl + 1
            out.append(text[pos:end])
            pos = end
            continue
        m = ident.match(text, pos)
        if m:
            word = m.group(0)
            qualified = pos > 0 and text[pos - 1] == "."
            if not qualified and word.lower() in rendered:
                out.append(rendered[word.lower()])
            else:
                out.append(word)
            pos = m.end()
            continue
        out.append(c)
        pos += 1
    return "".join(out)


# --- let chains -----------------------------------------------------------------


def emit_let_chain(chain: LetChain, dialect: str) -> str:
    """Render a binding chain as the dialect's sequencing construct.

    postgres: single-row derived tables chained with LEFT JOIN LATERAL
    (each later binding may reference the earlier ones).  sqlite: onion
    nesting, each binding one enclosing derived-table layer.
    """
    udf = _dummy_udf()
    ctx = _Ctx(dialect=dialect, udf=udf)
    if dialect == "postgres":
        return _pg_chain_text(chain.bindings, ctx, indent="")
    return _lite_onion(chain.bindings, ctx, base=None)


def _pg_chain_text(bindings: list[tuple[str, n.Expr]], ctx: _Ctx, indent: str) -> str:
    parts: list[str] = []
    for i, (var, expr) in enumerate(bindings):
        piece = f"(SELECT {_render(expr, ctx, 0)}) AS _{i + 1}({var})"
        if i == 0:
            parts.append(indent + piece)
        else:
            parts.append(f"{indent} LEFT JOIN LATERAL")
            parts.append(indent + piece)
            parts.append(f"{indent} ON true")
    return "\n".join(parts)


def _lite_onion(bindings: list[tuple[str, n.Expr]], ctx: _Ctx, base: str | None) -> str:
    """Each binding becomes one enclosing derived-table layer."""
    inner: str | None = base
    for var, expr in bindings:
        rendered = _render(expr, ctx, 0)
        if inner is None:
            inner = f"SELECT {rendered} AS {var}"
        else:
            inner = f'SELECT "inner".*, {rendered} AS {var} FROM ({inner}) AS "inner"'
    assert inner is not None
    return inner


def _dummy_udf() -> Udf:
    return Udf(
        name="", params=[], worker_name="", arm_names=[], unified_params=[],
        initial_target=None, initial_args=[], body=BaseCase(n.Literal(0)),
        return_type="int",
    )


# --- column layout ----------------------------------------------------------------


@dataclass
class _Col:
    name: str
    kind: str  # callflag | fn | param | result
    param: str | None = None
    tag: str | None = None
    axis: str | None = None  # x/y for flattened coord halves


def _columns(u: Udf, dialect: str) -> list[_Col]:
    cols = [_Col('"call?"', "callflag")]
    if u.has_dispatch:
        cols.append(_Col("fn", "fn", tag="int"))
    for p in u.unified_params:
        tag = u.var_types.get(p, "int")
        if dialect == "sqlite" and tag == "coord":
            cols.append(_Col(f"{p}_x", "param", param=p, tag="int", axis="x"))
            cols.append(_Col(f"{p}_y", "param", param=p, tag="int", axis="y"))
        else:
            cols.append(_Col(p, "param", param=p, tag=tag))
    if dialect == "sqlite" and u.return_type == "coord":
        cols.append(_Col("result_x", "result", tag="int", axis="x"))
        cols.append(_Col("result_y", "result", tag="int", axis="y"))
    else:
        cols.append(_Col("result", "result", tag=u.return_type))
    return cols


# --- postgres body -----------------------------------------------------------------


def _pg_body(e: UdfExpr, u: Udf, ctx: _Ctx, indent: str) -> str:
    if isinstance(e, Case):
        lines = [f"{indent}CASE"]
        for guard, arm in e.arms:
            lines.append(f"{indent}  WHEN {_render(guard, ctx, 0)} THEN")
            lines.append(_pg_body(arm, u, ctx, indent + "    "))
        if e.default is not None:
            lines.append(f"{indent}  ELSE")
            lines.append(_pg_body(e.default, u, ctx, indent + "    "))
        lines.append(f"{indent}END")
        return "\n".join(lines)
    if isinstance(e, LetChain):
        lines = [f"{indent}(SELECT"]
        lines.append(_pg_body(e.body, u, ctx, indent + "   "))
        lines.append(f"{indent} FROM")
        lines.append(_pg_chain_text(e.bindings, ctx, indent + "  "))
        lines.append(f"{indent})")
        return "\n".join(lines)
    if isinstance(e, RecCall):
        inner = []
        if u.has_dispatch:
            inner.append(str(e.target))
        inner.extend(_render(a, ctx, 0) for a in e.args)
        return f"{indent}ROW(true, ROW({', '.join(inner)}), NULL)"
    if isinstance(e, BaseCase):
        return f"{indent}ROW(false, NULL, {_render(e.expr, ctx, 0)})"
    raise TypeError(f"not a worker-body node: {e!r}")


# --- sqlite body -------------------------------------------------------------------


def _collect_chains(e: UdfExpr) -> list[tuple[str, n.Expr]]:
    """All let bindings in evaluation (depth-first) order."""
    out: list[tuple[str, n.Expr]] = []

    def walk(x: UdfExpr) -> None:
        if isinstance(x, LetChain):
            out.extend(x.bindings)
            walk(x.body)
        elif isinstance(x, Case):
            for _, arm in x.arms:
                walk(arm)
            if x.default is not None:
                walk(x.default)

    walk(e)
    return out


def _leaf_column_value(e: RecCall | BaseCase, col: _Col, u: Udf, ctx: _Ctx) -> str:
    if isinstance(e, RecCall):
        if col.kind == "callflag":
            return "true"
        if col.kind == "fn":
            return str(e.target)
        if col.kind == "result":
            return "NULL"
        arg = e.args[u.unified_params.index(col.param)]
        if col.axis is not None:
            return _coord_part(arg, col.axis, ctx)
        return _render(arg, ctx, 0)
    # base case
    if col.kind == "callflag":
        return "false"
    if col.kind == "result":
        if col.axis is not None:
            return _coord_part(e.expr, col.axis, ctx)
        return _render(e.expr, ctx, 0)
    return "NULL"


def _lite_column_expr(e: UdfExpr, col: _Col, u: Udf, ctx: _Ctx, indent: str) -> str:
    """Row construction distributed over one output column."""
    if isinstance(e, (RecCall, BaseCase)):
        return indent + _leaf_column_value(e, col, u, ctx)
    if isinstance(e, LetChain):
        return _lite_column_expr(e.body, col, u, ctx, indent)
    if isinstance(e, Case):
        lines = [f"{indent}CASE"]
        for guard, arm in e.arms:
            lines.append(f"{indent}  WHEN {_render(guard, ctx, 0)} THEN")
            lines.append(_lite_column_expr(arm, col, u, ctx, indent + "    "))
        if e.default is not None:
            lines.append(f"{indent}  ELSE")
            lines.append(_lite_column_expr(e.default, col, u, ctx, indent + "    "))
        lines.append(f"{indent}END")
        return "\n".join(lines)
    raise TypeError(f"not a worker-body node: {e!r}")


# --- the CTE template ----------------------------------------------------------------


def _seed_value(u: Udf, col: _Col, ctx: _Ctx) -> str:
    if col.kind == "callflag":
        return "true"
    if col.kind == "fn":
        return str(u.initial_target)
    if col.kind == "result":
        if col.axis is not None:
            return f"CAST(NULL AS {ctx.type_name('int')})"
        return f"CAST(NULL AS {ctx.type_name(col.tag)})"
    arg = u.initial_args[u.unified_params.index(col.param)]
    if col.axis is not None:
        return _coord_part(arg, col.axis, ctx)
    return _render(arg, ctx, 0)


def emit_cte(u: Udf, dialect: str = "postgres", mode: str = "recursive") -> SqlQuery:
    """Instantiate the recursive-CTE template for the worker."""
    if dialect not in DIALECTS:
        raise TypeMismatchError(f"unknown dialect {dialect!r}")
    if mode not in MODES:
        raise TypeMismatchError(f"unknown mode {mode!r}")
    if mode == "iterate" and dialect == "sqlite":
        raise UnsupportedCombinationError(
            "iterate mode has no sqlite rendering (no engine implements it); "
            "the simulator covers its semantics"
        )
    return _emit(u, dialect, mode, placeholders=False)


def _emit(u: Udf, dialect: str, mode: str, placeholders: bool) -> SqlQuery:
    coord_flat: set[str] = set()
    if dialect == "sqlite":
        coord_flat = {p for p in u.unified_params if u.var_types.get(p) == "coord"}
        coord_flat |= {p for p, tag in u.params if tag == "coord"}
    ctx = _Ctx(dialect=dialect, udf=u, placeholders=placeholders, coord_flat=coord_flat)
    cols = _columns(u, dialect)
    col_list = ", ".join(c.name for c in cols)
    keyword = "WITH RECURSIVE" if mode == "recursive" else "WITH ITERATE"
    body = adapt_body(u)

    seed_ctx = replace(ctx)  # wrapper-parameter references appear only here
    seed_cells = ", ".join(
        f"{_seed_value(u, c, seed_ctx)} AS {c.name}" for c in cols
    )

    lines: list[str] = []
    lines.append(f"{keyword} run({col_list}) AS (")
    lines.append("  -- seed: the original call")
    lines.append(f"  SELECT {seed_cells}")
    lines.append("    UNION ALL")
    lines.append("  -- one step per pending recursive call")
    if dialect == "postgres":
        lines.append("  SELECT iter.*")
        lines.append("  FROM   run AS r,")
        lines.append("         LATERAL (")
        lines.append("           SELECT")
        lines.append(_pg_body(body, u, ctx, "             "))
        lines.append(f"         ) AS iter({col_list})")
        lines.append('  WHERE  r."call?"')
    else:
        chains = _collect_chains(body)
        base = 'SELECT r.* FROM run AS r WHERE r."call?"'
        onion = _lite_onion(chains, ctx, base=base)
        lines.append("  SELECT")
        cell_texts = []
        for c in cols:
            cell_texts.append(_lite_column_expr(body, c, u, ctx, "    ") + f" AS {c.name}")
        lines.append(",\n".join(cell_texts))
        lines.append(f"  FROM ({onion})")
    lines.append(")")
    lines.append("-- extract the base-case result")
    if dialect == "sqlite" and u.return_type == "coord":
        lines.append("SELECT coord(r.result_x, r.result_y)")
    else:
        lines.append("SELECT r.result")
    lines.append("FROM   run AS r")
    lines.append('WHERE  NOT r."call?"')
    return SqlQuery(
        text="\n".join(lines),
        dialect=dialect,
        mode=mode,
        result_type=u.return_type,
        udf=u,
    )


def wrap_inline(q: SqlQuery) -> str:
    """Parenthesized scalar-subquery form with :name placeholders.

    The wrapper's parameters become named placeholders so the text can be
    substituted into a calling query at the original call site.
    """
    inlined = _emit(q.udf, q.dialect, q.mode, placeholders=True)
    return "(" + inlined.text + ")"


def substitute_placeholders(text: str, values: dict[str, str]) -> str:
    """Textual substitution of :name placeholders (for live execution)."""
    import re

    def repl(m: re.Match) -> str:
        name = m.group(1)
        if name not in values:
            raise TypeMismatchError(f"no value for placeholder :{name}")
        return values[name]

    return re.sub(r":([A-Za-z_][A-Za-z0-9_]*)", repl, text)
