"""Runtime values and the scalar type system shared by all evaluators.

Values are plain Python objects:

    null  -> None          int   -> int (checked 64-bit)
    bool  -> bool          float -> float (binary64)
    text  -> str           coord -> (int, int) tuple

Every variable, parameter, and query result carries one of the type tags
below.  Arithmetic follows SQL conventions: integer ops are checked 64-bit,
``/`` on integers truncates toward zero, and any operation on NULL yields
NULL (with the usual three-valued special cases for AND/OR).
"""

from __future__ import annotations

import math
import struct
from typing import Any

from .errors import IntegerOverflowError, TypeMismatchError

Value = Any  # None | bool | int | float | str | tuple[int, int]

TYPE_TAGS = ("int", "float", "text", "bool", "coord")

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1

# Accepted spellings in source text, normalised to the canonical tag.
TYPE_ALIASES = {
    "int": "int",
    "integer": "int",
    "bigint": "int",
    "float": "float",
    "float8": "float",
    "real": "float",
    "double": "float",
    "text": "text",
    "varchar": "text",
    "bool": "bool",
    "boolean": "bool",
    "coord": "coord",
}


def normalize_type(name: str) -> str | None:
    return TYPE_ALIASES.get(name.lower())


def type_of(value: Value) -> str | None:
    """Tag of a non-null value; None for NULL (which fits any tag)."""
    if value is None:
        return None
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, int):
        return "int"
    if isinstance(value, float):
        return "float"
    if isinstance(value, str):
        return "text"
    if isinstance(value, tuple):
        return "coord"
    raise TypeMismatchError(f"not a runtime value: {value!r}")


def check_value(value: Value, tag: str, context: str = "value") -> Value:
    """Verify that ``value`` fits ``tag``; NULL always fits."""
    if value is None:
        return value
    actual = type_of(value)
    if actual != tag:
        raise TypeMismatchError(f"{context}: expected {tag}, got {actual} ({value!r})")
    if tag == "int":
        check_int64(value, context)
    if tag == "coord":
        if len(value) != 2 or not all(isinstance(c, int) and not isinstance(c, bool) for c in value):
            raise TypeMismatchError(f"{context}: coord must be a pair of ints, got {value!r}")
    return value


def check_int64(n: int, context: str = "integer") -> int:
    if not (INT64_MIN <= n <= INT64_MAX):
        raise IntegerOverflowError(f"{context}: {n} outside 64-bit range")
    return n


def values_identical(a: Value, b: Value) -> bool:
    """Bit-identical comparison used by the differential-testing suites.

    Stricter than ``==``: 1 and True differ, 1 and 1.0 differ, floats
    compare by their binary64 representation (so NaN == NaN here).
    """
    if type(a) is not type(b):
        return False
    if isinstance(a, float):
        return struct.pack(">d", a) == struct.pack(">d", b)
    if isinstance(a, tuple):
        return len(a) == len(b) and all(values_identical(x, y) for x, y in zip(a, b))
    return a == b


def render_value(v: Value) -> str:
    """Human-facing rendering used by the CLI and dumps."""
    if v is None:
        return "NULL"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return f"({v[0]},{v[1]})"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_coord(text: str) -> tuple[int, int]:
    """Parse the textual coord literal ``(x,y)``."""
    s = text.strip()
    if not (s.startswith("(") and s.endswith(")")):
        raise TypeMismatchError(f"bad coord literal: {text!r}")
    parts = s[1:-1].split(",")
    if len(parts) != 2:
        raise TypeMismatchError(f"bad coord literal: {text!r}")
    return (int(parts[0].strip()), int(parts[1].strip()))


def _require_number(op: str, v: Value) -> None:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise TypeMismatchError(f"operator {op}: expected a number, got {type_of(v)}")


def _require_same_numeric(op: str, a: Value, b: Value) -> None:
    _require_number(op, a)
    _require_number(op, b)
    if isinstance(a, int) != isinstance(b, int):
        raise TypeMismatchError(
            f"operator {op}: mixed int/float operands require an explicit CAST"
        )


def _int_div(a: int, b: int) -> int:
    if b == 0:
        raise TypeMismatchError("division by zero")
    q = abs(a) // abs(b)
    return -q if (a < 0) != (b < 0) else q


def _int_mod(a: int, b: int) -> int:
    if b == 0:
        raise TypeMismatchError("modulo by zero")
    return a - _int_div(a, b) * b  # sign follows the dividend, per SQL


def apply_binop(op: str, a: Value, b: Value) -> Value:
    """SQL-flavoured binary operators with NULL propagation."""
    if op == "AND":
        # three-valued logic: false dominates NULL
        if a is False or b is False:
            return False
        if a is None or b is None:
            return None
        _require_bool(op, a), _require_bool(op, b)
        return a and b
    if op == "OR":
        if a is True or b is True:
            return True
        if a is None or b is None:
            return None
        _require_bool(op, a), _require_bool(op, b)
        return a or b

    if a is None or b is None:
        return None

    if op in ("=", "<>"):
        eq = _sql_equal(a, b)
        return eq if op == "=" else (not eq)
    if op in ("<", "<=", ">", ">="):
        return _sql_compare(op, a, b)
    if op == "||":
        if not isinstance(a, str) or not isinstance(b, str):
            raise TypeMismatchError("operator ||: expected text operands")
        return a + b

    _require_same_numeric(op, a, b)
    if isinstance(a, int):
        if op == "+":
            return check_int64(a + b, "addition")
        if op == "-":
            return check_int64(a - b, "subtraction")
        if op == "*":
            return check_int64(a * b, "multiplication")
        if op == "/":
            return check_int64(_int_div(a, b), "division")
        if op == "%":
            return check_int64(_int_mod(a, b), "modulo")
    else:
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            if b == 0.0:
                raise TypeMismatchError("division by zero")
            return a / b
        if op == "%":
            raise TypeMismatchError("operator %: expected int operands")
    raise TypeMismatchError(f"unknown operator {op}")


def _require_bool(op: str, v: Value) -> None:
    if not isinstance(v, bool):
        raise TypeMismatchError(f"operator {op}: expected bool, got {type_of(v)}")


def _sql_equal(a: Value, b: Value) -> bool:
    ta, tb = type_of(a), type_of(b)
    if ta != tb:
        raise TypeMismatchError(f"operator =: cannot compare {ta} with {tb}")
    return a == b


def _sql_compare(op: str, a: Value, b: Value) -> bool:
    ta, tb = type_of(a), type_of(b)
    if ta != tb or ta in ("coord", "bool"):
        raise TypeMismatchError(f"operator {op}: cannot order {ta} against {tb}")
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    return a >= b


def apply_unop(op: str, v: Value) -> Value:
    if v is None:
        return None
    if op == "-":
        _require_number(op, v)
        if isinstance(v, int):
            return check_int64(-v, "negation")
        return -v
    if op == "NOT":
        _require_bool(op, v)
        return not v
    raise TypeMismatchError(f"unknown unary operator {op}")


def apply_builtin(name: str, args: list[Value]) -> Value:
    """Built-in scalar functions available in body expressions.

    ``random`` is not here: it draws from the query oracle and is handled
    by each evaluator directly.
    """
    if name == "is_null":
        _arity(name, args, 1)
        return args[0] is None

    if any(a is None for a in args):
        return None

    if name == "sign":
        _arity(name, args, 1)
        v = args[0]
        _require_number(name, v)
        if isinstance(v, int):
            return (v > 0) - (v < 0)
        return math.copysign(1.0, v) if v != 0.0 else 0.0
    if name == "abs":
        _arity(name, args, 1)
        v = args[0]
        _require_number(name, v)
        if isinstance(v, int):
            return check_int64(abs(v), "abs")
        return abs(v)
    if name == "length":
        _arity(name, args, 1)
        if not isinstance(args[0], str):
            raise TypeMismatchError("length: expected text")
        return len(args[0])
    if name == "substr":
        if len(args) not in (2, 3):
            raise TypeMismatchError("substr: expected 2 or 3 arguments")
        s, start = args[0], args[1]
        if not isinstance(s, str) or isinstance(start, bool) or not isinstance(start, int):
            raise TypeMismatchError("substr: expected (text, int[, int])")
        if len(args) == 3:
            count = args[2]
            if isinstance(count, bool) or not isinstance(count, int):
                raise TypeMismatchError("substr: expected (text, int, int)")
            if count < 0:
                raise TypeMismatchError("substr: negative length")
            end = start + count  # 1-based exclusive end
            begin = max(start, 1)
            if end <= begin:
                return ""
            return s[begin - 1 : end - 1]
        return s[max(start, 1) - 1 :]
    if name in ("cast_int", "cast_float", "cast_text"):
        _arity(name, args, 1)
        return _cast(name.removeprefix("cast_"), args[0])
    raise TypeMismatchError(f"unknown builtin {name}")


def _cast(target: str, v: Value) -> Value:
    if target == "int":
        if isinstance(v, bool):
            raise TypeMismatchError("cannot cast bool to int")
        if isinstance(v, int):
            return v
        if isinstance(v, float):
            # round half away from zero, then check the 64-bit range
            r = math.floor(v + 0.5) if v >= 0 else math.ceil(v - 0.5)
            return check_int64(int(r), "cast to int")
        if isinstance(v, str):
            try:
                return check_int64(int(v.strip()), "cast to int")
            except ValueError:
                raise TypeMismatchError(f"cannot cast {v!r} to int") from None
    if target == "float":
        if isinstance(v, bool):
            raise TypeMismatchError("cannot cast bool to float")
        if isinstance(v, (int, float)):
            return float(v)
        if isinstance(v, str):
            try:
                return float(v.strip())
            except ValueError:
                raise TypeMismatchError(f"cannot cast {v!r} to float") from None
    if target == "text":
        if isinstance(v, str):
            return v
        return render_value(v)
    raise TypeMismatchError(f"cannot cast {type_of(v)} to {target}")


def _arity(name: str, args: list[Value], n: int) -> None:
    if len(args) != n:
        raise TypeMismatchError(f"{name}: expected {n} argument(s), got {len(args)}")


BUILTIN_NAMES = frozenset(
    {"sign", "abs", "length", "substr", "is_null", "cast_int", "cast_float", "cast_text"}
)

# Result tags for builtins whose output type does not depend on the input.
BUILTIN_RESULT_TAGS = {
    "length": "int",
    "is_null": "bool",
    "cast_int": "int",
    "cast_float": "float",
    "cast_text": "text",
    "substr": "text",
}
