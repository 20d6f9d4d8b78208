"""Pluggable query oracle and the recursive-CTE simulator.

The oracle stands in for a live database: it answers embedded-query
evaluations from in-memory tables through registered evaluation routines,
and serves random() draws from a 32-bit linear congruential generator so
every stage consumes an identical stream for a given seed.

``simulate_cte`` executes the semantics of the emitted query: a seed row,
then one successor row per row whose call flag is set, stopping at the
first base-case row.  ``recursive`` mode retains the whole trace (the
union-all fixpoint); ``iterate`` mode keeps only the most recent row, so
its working set never exceeds the current row plus its successor.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

from .errors import IterationLimitError, OracleError, TableLoadError, TypeMismatchError
from .interp import DEFAULT_ITERATION_CAP, eval_expr
from .udf import Udf, _eval_body
from .values import Value, check_value, normalize_type, parse_coord

LCG_MULTIPLIER = 1664525
LCG_INCREMENT = 1013904223
LCG_MODULUS = 2**32


def next_random(state: int) -> tuple[float, int]:
    """One LCG step: returns (uniform value in [0,1), new state)."""
    state = (LCG_MULTIPLIER * state + LCG_INCREMENT) % LCG_MODULUS
    return state / LCG_MODULUS, state


class QueryOracle(Protocol):
    def eval_query(self, query_id: str, params: list[Value]) -> Value: ...

    def next_random(self) -> float: ...


@dataclass
class Table:
    name: str
    columns: list[tuple[str, str]]  # (column name, type tag)
    rows: list[tuple[Value, ...]]

    def column_index(self, name: str) -> int:
        for i, (c, _) in enumerate(self.columns):
            if c == name:
                return i
        raise KeyError(f"table {self.name} has no column {name}")

    def column(self, name: str) -> list[Value]:
        i = self.column_index(name)
        return [r[i] for r in self.rows]


Evaluator = Callable[[dict[str, Table], list[Value]], Value]


class TableOracle:
    """Query oracle over named in-memory tables plus seeded randomness.

    One instance serves a single evaluation run: the RNG state mutates and
    the call log is ordered.  The random stream is independent of query
    evaluations, so two runs with the same seed and the same query pattern
    draw identical values.
    """

    def __init__(
        self,
        tables: dict[str, Table] | None = None,
        evaluators: dict[str, Evaluator] | None = None,
        seed: int = 0,
    ):
        self.tables = tables or {}
        self.evaluators = evaluators or {}
        self.rng_state = seed % LCG_MODULUS
        self.call_log: list[tuple] = []

    def eval_query(self, query_id: str, params: list[Value]) -> Value:
        self.call_log.append(("query", query_id, tuple(params)))
        fn = self.evaluators.get(query_id)
        if fn is None:
            raise OracleError(f"no evaluator registered for {query_id}")
        return fn(self.tables, params)

    def next_random(self) -> float:
        value, self.rng_state = next_random(self.rng_state)
        self.call_log.append(("random", value))
        return value

    def query_log(self) -> list[tuple]:
        return [entry for entry in self.call_log if entry[0] == "query"]

    def random_log(self) -> list[tuple]:
        return [entry for entry in self.call_log if entry[0] == "random"]


def _parse_cell(raw: str, tag: str, where: str) -> Value:
    text = raw.strip()
    try:
        if text == "" and tag != "text":
            return None
        if tag == "int":
            return int(text)
        if tag == "float":
            return float(text)
        if tag == "bool":
            if text.lower() in ("true", "t", "1"):
                return True
            if text.lower() in ("false", "f", "0"):
                return False
            raise ValueError(text)
        if tag == "coord":
            return parse_coord(text)
        return raw
    except (ValueError, TypeMismatchError) as exc:
        raise TableLoadError(f"{where}: cannot read {raw!r} as {tag}") from exc


def load_tables(path: str | Path, keys: dict[str, list[str]] | None = None) -> dict[str, Table]:
    """Load every ``*.csv`` under ``path`` (header row: ``name:type``)."""
    directory = Path(path)
    if not directory.is_dir():
        raise TableLoadError(f"{directory} is not a directory")
    tables: dict[str, Table] = {}
    for csv_path in sorted(directory.glob("*.csv")):
        name = csv_path.stem
        with open(csv_path, newline="", encoding="utf-8") as handle:
            reader = csv.reader(handle)
            try:
                header = next(reader)
            except StopIteration:
                raise TableLoadError(f"{csv_path.name}: missing header row") from None
            columns: list[tuple[str, str]] = []
            for cell in header:
                if ":" not in cell:
                    raise TableLoadError(f"{csv_path.name}: header cell {cell!r} is not name:type")
                cname, _, ctype = cell.partition(":")
                tag = normalize_type(ctype.strip())
                if tag is None:
                    raise TableLoadError(f"{csv_path.name}: unknown column type {ctype!r}")
                columns.append((cname.strip(), tag))
            rows: list[tuple[Value, ...]] = []
            for lineno, record in enumerate(reader, start=2):
                if not record:
                    continue
                if len(record) != len(columns):
                    raise TableLoadError(
                        f"{csv_path.name} line {lineno}: expected {len(columns)} cells,"
                        f" got {len(record)}"
                    )
                rows.append(tuple(
                    _parse_cell(raw, tag, f"{csv_path.name} line {lineno}")
                    for raw, (_, tag) in zip(record, columns)
                ))
        table = Table(name, columns, rows)
        if keys and name in keys:
            _check_key(table, keys[name], csv_path.name)
        tables[name] = table
    return tables


def _check_key(table: Table, key_cols: list[str], filename: str) -> None:
    idx = [table.column_index(c) for c in key_cols]
    seen: set[tuple] = set()
    for row in table.rows:
        key = tuple(row[i] for i in idx)
        if key in seen:
            raise TableLoadError(f"{filename}: duplicate key {key} over {key_cols}")
        seen.add(key)


def check_group_sums(
    table: Table,
    group_cols: list[str],
    weight_col: str,
    expected: float = 1.0,
    tolerance: float = 1e-9,
) -> None:
    """Verify that ``weight_col`` sums to ``expected`` within each group."""
    gidx = [table.column_index(c) for c in group_cols]
    widx = table.column_index(weight_col)
    sums: dict[tuple, float] = {}
    for row in table.rows:
        key = tuple(row[i] for i in gidx)
        sums[key] = sums.get(key, 0.0) + row[widx]
    for key, total in sums.items():
        if abs(total - expected) > tolerance:
            raise TableLoadError(
                f"table {table.name}: weights for group {key} sum to {total!r}, "
                f"expected {expected}"
            )


# --- run rows and simulation ----------------------------------------------------


@dataclass(eq=True)
class RunRow:
    """One row of the simulation table ``run``.

    ``call_flag`` is True while the worker still has a recursive call to
    perform (args carry the call's arguments, result is NULL) and False
    for the base case (args are NULL, result carries the value).
    """

    call_flag: bool
    args: tuple
    result: Value

    def __post_init__(self) -> None:
        if self.call_flag and self.result is not None:
            raise TypeMismatchError("a call row must carry a NULL result")
        if not self.call_flag and any(a is not None for a in self.args):
            raise TypeMismatchError("a base-case row must carry NULL argument slots")

    def text_payload(self) -> int:
        total = 0
        for v in (*self.args, self.result):
            if isinstance(v, str):
                total += len(v)
        return total


@dataclass
class SimResult:
    value: Value
    rows_emitted: int
    max_working_set: int
    retained_cells: int
    mode: str
    trace: list[RunRow] = field(default_factory=list, repr=False)


def simulate_cte(
    u: Udf,
    args: list[Value],
    oracle: QueryOracle,
    mode: str = "recursive",
    iteration_cap: int = DEFAULT_ITERATION_CAP,
) -> SimResult:
    """Execute the emitted query's semantics with working-set accounting."""
    if mode not in ("recursive", "iterate"):
        raise TypeMismatchError(f"unknown simulation mode {mode!r}")
    if len(args) != len(u.params):
        raise TypeMismatchError(f"{u.name}: expected {len(u.params)} argument(s)")

    from .sqlgen import adapt_body  # late import: sqlgen builds on this module's types

    wrapper_env: dict[str, Value] = {}
    for (name, tag), value in zip(u.params, args):
        wrapper_env[name] = check_value(value, tag, f"argument {name}")
    body = adapt_body(u)

    def call_row(target: int | None, values: list[Value]) -> RunRow:
        slots = ((target,) if u.has_dispatch else ()) + tuple(values)
        return RunRow(True, slots, None)

    width = (1 if u.has_dispatch else 0) + len(u.unified_params)
    seed_values = [eval_expr(a, wrapper_env, oracle) for a in u.initial_args]
    current = call_row(u.initial_target, seed_values)

    rows_emitted = 1
    retained: list[RunRow] = [current]
    trace: list[RunRow] = [current]
    max_working_set = 1
    budget = iteration_cap

    while current.call_flag:
        budget -= 1
        if budget < 0:
            raise IterationLimitError("loop iteration cap exceeded")
        slots = current.args
        if u.has_dispatch:
            target, values = slots[0], slots[1:]
        else:
            target, values = None, slots
        env: dict[str, Value] = dict(zip(u.unified_params, values))
        if u.has_dispatch:
            env["fn"] = target
        outcome = _eval_body(body, env, oracle)
        if outcome[0] == "call":
            succ = call_row(outcome[1], outcome[2])
        else:
            succ = RunRow(False, (None,) * width, outcome[1])
        rows_emitted += 1
        trace.append(succ)
        if mode == "recursive":
            retained.append(succ)
            max_working_set = max(max_working_set, len(retained))
        else:
            max_working_set = max(max_working_set, 2)  # current + successor
            retained = [succ]
        current = succ

    value = check_value(current.result, u.return_type, f"{u.name} result")
    return SimResult(
        value=value,
        rows_emitted=rows_emitted,
        max_working_set=max_working_set,
        retained_cells=sum(r.text_payload() for r in retained),
        mode=mode,
        trace=trace,
    )
