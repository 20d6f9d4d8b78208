"""Parser for the supported stored-function subset.

Accepts one ``CREATE FUNCTION ... LANGUAGE PLPGSQL`` definition with a
dollar-quoted body.  Embedded SQL queries -- any parenthesized group whose
first keyword is SELECT or WITH -- are captured verbatim as opaque
``QueryTemplate`` objects; the only analysis applied to their text is
free-variable detection by name matching against the variables in scope.

Supported statements: assignment, IF/ELSIF/ELSE, FOR over an integer
range, WHILE, bare LOOP, EXIT [label] [WHEN cond], CONTINUE [label],
RETURN.  FOREACH, arrays, exception blocks, and OUT parameters are
outside the subset and raise ``UnsupportedConstructError``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from . import nodes as n
from .errors import (
    ParseError,
    TypeMismatchError,
    UndeclaredVariableError,
    UnsupportedConstructError,
)
from .values import BUILTIN_NAMES, BUILTIN_RESULT_TAGS, INT64_MAX, normalize_type

_KEYWORDS = {
    "create", "or", "replace", "function", "returns", "as", "language",
    "declare", "begin", "end", "if", "then", "elsif", "else", "for", "in",
    "loop", "while", "exit", "continue", "when", "return", "and", "not",
    "is", "null", "true", "false", "cast", "select", "with",
}

_UNSUPPORTED_KEYWORDS = {
    "foreach": "FOREACH",
    "exception": "EXCEPTION block",
    "raise": "RAISE",
    "perform": "PERFORM",
    "case": "CASE statement",
    "out": "OUT parameter",
}

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")

# Multi-character operators first so the lexer takes the longest match.
_OPERATORS = ["<<", ">>", ":=", "..", "<>", "!=", "<=", ">=", "||",
              "=", "<", ">", "+", "-", "*", "/", "%", "(", ")", ",", ";"]


@dataclass
class Token:
    kind: str  # ident | int | float | string | op | eof
    value: object
    line: int
    col: int
    end_offset: int


class Lexer:
    def __init__(self, text: str, offset: int = 0, line: int = 1, col: int = 1):
        self.text = text
        self.pos = offset
        self.line = line
        self.col = col

    def error(self, message: str) -> ParseError:
        return ParseError(message, self.line, self.col)

    def _advance(self, count: int) -> None:
        for _ in range(count):
            if self.pos < len(self.text) and self.text[self.pos] == "\n":
                self.line += 1
                self.col = 1
            else:
                self.col += 1
            self.pos += 1

    def skip_trivia(self) -> None:
        while self.pos < len(self.text):
            c = self.text[self.pos]
            if c in " \t\r\n":
                self._advance(1)
            elif self.text.startswith("--", self.pos):
                while self.pos < len(self.text) and self.text[self.pos] != "\n":
                    self._advance(1)
            elif self.text.startswith("/*", self.pos):
                end = self.text.find("*/", self.pos + 2)
                if end < 0:
                    raise self.error("unterminated block comment")
                self._advance(end + 2 - self.pos)
            else:
                return

    def next_token(self) -> Token:
        self.skip_trivia()
        line, col = self.line, self.col
        if self.pos >= len(self.text):
            return Token("eof", None, line, col, self.pos)
        c = self.text[self.pos]

        if c == "$":
            raise ParseError("unexpected $ outside function body quoting", line, col)

        if c == "'":
            return self._lex_string(line, col)

        if c.isdigit():
            return self._lex_number(line, col)

        m = _IDENT_RE.match(self.text, self.pos)
        if m:
            word = m.group(0)
            self._advance(len(word))
            return Token("ident", word.lower(), line, col, self.pos)

        for op in _OPERATORS:
            if self.text.startswith(op, self.pos):
                self._advance(len(op))
                value = "<>" if op == "!=" else op
                return Token("op", value, line, col, self.pos)

        raise ParseError(f"unexpected character {c!r}", line, col)

    def _lex_string(self, line: int, col: int) -> Token:
        self._advance(1)
        chars: list[str] = []
        while True:
            if self.pos >= len(self.text):
                raise ParseError("unterminated string literal", line, col)
            c = self.text[self.pos]
            if c == "'":
                if self.text.startswith("''", self.pos):
                    chars.append("'")
                    self._advance(2)
                    continue
                self._advance(1)
                return Token("string", "".join(chars), line, col, self.pos)
            chars.append(c)
            self._advance(1)

    def _lex_number(self, line: int, col: int) -> Token:
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos].isdigit():
            self._advance(1)
        is_float = False
        # a single dot followed by a digit starts the fraction; ".." is the
        # range operator and stays untouched
        if (
            self.pos + 1 < len(self.text)
            and self.text[self.pos] == "."
            and self.text[self.pos + 1].isdigit()
        ):
            is_float = True
            self._advance(1)
            while self.pos < len(self.text) and self.text[self.pos].isdigit():
                self._advance(1)
        if self.pos < len(self.text) and self.text[self.pos] in "eE":
            after = self.text[self.pos + 1 : self.pos + 3]
            if after[:1].isdigit() or (after[:1] in "+-" and after[1:2].isdigit()):
                is_float = True
                self._advance(2)
                while self.pos < len(self.text) and self.text[self.pos].isdigit():
                    self._advance(1)
        raw = self.text[start : self.pos]
        if is_float:
            return Token("float", float(raw), line, col, self.pos)
        value = int(raw)
        if value > INT64_MAX:
            raise ParseError(f"integer literal {raw} outside 64-bit range", line, col)
        return Token("int", value, line, col, self.pos)

    def capture_parenthesized(self) -> str:
        """Raw text from the current position up to the matching ')'.

        The caller already consumed the opening paren.  Tracks nested
        parens, string literals, and comments so embedded queries stay
        opaque bytes.  Leaves the lexer positioned after the ')'.
        """
        start = self.pos
        depth = 1
        while self.pos < len(self.text):
            c = self.text[self.pos]
            if c == "'":
                self._advance(1)
                while self.pos < len(self.text):
                    if self.text[self.pos] == "'":
                        if self.text.startswith("''", self.pos):
                            self._advance(2)
                            continue
                        self._advance(1)
                        break
                    self._advance(1)
                continue
            if self.text.startswith("--", self.pos):
                while self.pos < len(self.text) and self.text[self.pos] != "\n":
                    self._advance(1)
                continue
            if self.text.startswith("/*", self.pos):
                end = self.text.find("*/", self.pos + 2)
                if end < 0:
                    raise self.error("unterminated block comment in query")
                self._advance(end + 2 - self.pos)
                continue
            if c == "(":
                depth += 1
            elif c == ")":
                depth -= 1
                if depth == 0:
                    text = self.text[start : self.pos]
                    self._advance(1)
                    return text
            self._advance(1)
        raise self.error("unterminated embedded query")


def _find_free_vars(query_text: str, in_scope: list[str]) -> list[str]:
    """Program variables occurring in the query text, first occurrence first.

    An identifier counts only when it is not qualified (not preceded by a
    dot) and not inside a string literal or comment.
    """
    scope = set(in_scope)
    found: list[str] = []
    pos = 0
    text = query_text
    while pos < len(text):
        c = text[pos]
        if c == "'":
            pos += 1
            while pos < len(text):
                if text[pos] == "'":
                    if text.startswith("''", pos):
                        pos += 2
                        continue
                    pos += 1
                    break
                pos += 1
            continue
        if text.startswith("--", pos):
            nl = text.find("\n", pos)
            pos = len(text) if nl < 0 else nl + 1
            continue
        if text.startswith("/*", pos):
            end = text.find("*/", pos + 2)
            pos = len(text) if end < 0 else end + 2
            continue
        m = _IDENT_RE.match(text, pos)
        if m:
            word = m.group(0).lower()
            qualified = pos > 0 and text[pos - 1] == "."
            if not qualified and word in scope and word not in found:
                found.append(word)
            pos = m.end()
            continue
        pos += 1
    return found


class Parser:
    def __init__(self, source: str):
        self.source = source
        self.lexer = Lexer(source)
        self._peeked: Token | None = None
        self.templates: dict[str, n.QueryTemplate] = {}
        self._query_counter = 0
        # scope: ordered names; types for params/decls (loop vars are int)
        self.scope: list[str] = []
        self.var_types: dict[str, str] = {}
        self.loop_stack: list[str | None] = []

    # --- token plumbing ---

    def peek(self) -> Token:
        if self._peeked is None:
            self._peeked = self.lexer.next_token()
        return self._peeked

    def next(self) -> Token:
        tok = self.peek()
        self._peeked = None
        return tok

    def expect_op(self, op: str) -> Token:
        tok = self.next()
        if tok.kind != "op" or tok.value != op:
            raise ParseError(f"expected {op!r}, found {self._show(tok)}", tok.line, tok.col)
        return tok

    def expect_keyword(self, word: str) -> Token:
        tok = self.next()
        if tok.kind != "ident" or tok.value != word:
            raise ParseError(f"expected {word.upper()}, found {self._show(tok)}", tok.line, tok.col)
        return tok

    def expect_name(self) -> Token:
        tok = self.next()
        if tok.kind != "ident":
            raise ParseError(f"expected an identifier, found {self._show(tok)}", tok.line, tok.col)
        if tok.value in _UNSUPPORTED_KEYWORDS:
            raise UnsupportedConstructError(_UNSUPPORTED_KEYWORDS[tok.value], tok.line, tok.col)
        if tok.value in _KEYWORDS:
            raise ParseError(f"expected an identifier, found keyword {tok.value.upper()}",
                             tok.line, tok.col)
        return tok

    def at_keyword(self, *words: str) -> bool:
        tok = self.peek()
        return tok.kind == "ident" and tok.value in words

    def at_op(self, *ops: str) -> bool:
        tok = self.peek()
        return tok.kind == "op" and tok.value in ops

    @staticmethod
    def _show(tok: Token) -> str:
        if tok.kind == "eof":
            return "end of input"
        return repr(tok.value)

    # --- top level ---

    def parse_function(self) -> n.FunctionAst:
        self.expect_keyword("create")
        if self.at_keyword("or"):
            self.next()
            self.expect_keyword("replace")
        self.expect_keyword("function")
        name = self.expect_name().value
        self.expect_op("(")
        params: list[tuple[str, str]] = []
        if not self.at_op(")"):
            while True:
                pname = self.expect_name().value
                ptype = self._parse_type()
                params.append((pname, ptype))
                if self.at_op(","):
                    self.next()
                    continue
                break
        self.expect_op(")")
        self.expect_keyword("returns")
        return_type = self._parse_type()
        self.expect_keyword("as")

        body_lexer = self._enter_dollar_body()
        outer_lexer = self.lexer
        self.lexer = body_lexer
        self._peeked = None

        for pname, ptype in params:
            self._declare(pname, ptype, body_lexer.line, body_lexer.col)

        declarations: list[n.Declaration] = []
        if self.at_keyword("declare"):
            self.next()
            while not self.at_keyword("begin"):
                declarations.append(self._parse_declaration())
        self.expect_keyword("begin")
        body = self._parse_statements(("end",))
        self.expect_keyword("end")
        if self.at_op(";"):
            self.next()
        tail = self.next()
        if tail.kind != "eof":
            raise ParseError(f"unexpected trailing content {self._show(tail)}", tail.line, tail.col)

        # back to the outer text: LANGUAGE PLPGSQL [;]
        self.lexer = outer_lexer
        self._peeked = None
        self.expect_keyword("language")
        lang = self.expect_name()
        if lang.value != "plpgsql":
            raise UnsupportedConstructError(f"language {lang.value}", lang.line, lang.col)
        if self.at_op(";"):
            self.next()
        tok = self.next()
        if tok.kind != "eof":
            raise ParseError(f"expected a single function definition, found {self._show(tok)}",
                             tok.line, tok.col)

        ast = n.FunctionAst(
            name=name,
            params=params,
            declarations=declarations,
            body=body,
            return_type=return_type,
            templates=self.templates,
        )
        _check_all_paths_return(ast)
        _assign_query_types(ast)
        return ast

    def _enter_dollar_body(self) -> Lexer:
        """Position on the dollar-quoted body and return a lexer over it."""
        self.lexer.skip_trivia()
        text, pos = self.lexer.text, self.lexer.pos
        m = re.match(r"\$([A-Za-z_]*)\$", text[pos:])
        if not m:
            raise ParseError("expected a dollar-quoted function body",
                             self.lexer.line, self.lexer.col)
        tag = m.group(0)
        body_start = pos + len(tag)
        body_end = text.find(tag, body_start)
        if body_end < 0:
            raise ParseError(f"unterminated dollar-quoted body ({tag})",
                             self.lexer.line, self.lexer.col)
        # line/col of the body start, for error positions inside the body
        consumed = text[:body_start]
        line = consumed.count("\n") + 1
        col = len(consumed) - (consumed.rfind("\n") + 1) + 1
        body_lexer = Lexer(text[:body_end], offset=body_start, line=line, col=col)
        self.lexer.pos = body_end + len(tag)
        self.lexer.line = line + text[body_start : body_end + len(tag)].count("\n")
        last_nl = text.rfind("\n", 0, body_end + len(tag))
        self.lexer.col = body_end + len(tag) - last_nl if last_nl >= 0 else body_end + len(tag) + 1
        return body_lexer

    def _parse_type(self) -> str:
        tok = self.next()
        if tok.kind != "ident":
            raise ParseError(f"expected a type name, found {self._show(tok)}", tok.line, tok.col)
        tag = normalize_type(tok.value)
        if tag is None:
            raise UnsupportedConstructError(f"type {tok.value}", tok.line, tok.col)
        return tag

    def _declare(self, name: str, tag: str, line: int, col: int) -> None:
        if name in self.var_types:
            raise ParseError(f"duplicate variable name {name}", line, col)
        self.scope.append(name)
        self.var_types[name] = tag

    def _parse_declaration(self) -> n.Declaration:
        name_tok = self.expect_name()
        tag = self._parse_type()
        init = None
        if self.at_op("=", ":="):
            self.next()
            init = self._parse_expr()
        self.expect_op(";")
        self._declare(name_tok.value, tag, name_tok.line, name_tok.col)
        return n.Declaration(name_tok.value, tag, init)

    # --- statements ---

    def _parse_statements(self, stop_words: tuple[str, ...]) -> list[n.Statement]:
        stmts: list[n.Statement] = []
        while not self.at_keyword(*stop_words):
            stmts.append(self._parse_statement())
        return stmts

    def _parse_statement(self) -> n.Statement:
        tok = self.peek()
        if tok.kind == "op" and tok.value == "<<":
            self.next()
            label = self.expect_name().value
            self.expect_op(">>")
            if self.at_keyword("for"):
                return self._parse_for(label)
            if self.at_keyword("while"):
                return self._parse_while(label)
            if self.at_keyword("loop"):
                return self._parse_loop(label)
            bad = self.peek()
            raise ParseError("a label must precede FOR, WHILE, or LOOP", bad.line, bad.col)
        if tok.kind != "ident":
            raise ParseError(f"expected a statement, found {self._show(tok)}", tok.line, tok.col)
        if tok.value in _UNSUPPORTED_KEYWORDS:
            raise UnsupportedConstructError(_UNSUPPORTED_KEYWORDS[tok.value], tok.line, tok.col)
        if tok.value == "if":
            return self._parse_if()
        if tok.value == "for":
            return self._parse_for(None)
        if tok.value == "while":
            return self._parse_while(None)
        if tok.value == "loop":
            return self._parse_loop(None)
        if tok.value == "exit":
            return self._parse_exit()
        if tok.value == "continue":
            return self._parse_continue()
        if tok.value == "return":
            self.next()
            expr = self._parse_expr()
            self.expect_op(";")
            return n.Return(expr)
        return self._parse_assignment()

    def _parse_assignment(self) -> n.Statement:
        name_tok = self.expect_name()
        name = name_tok.value
        if name not in self.var_types:
            raise UndeclaredVariableError(name, name_tok.line, name_tok.col)
        if self.loop_stack and name in self._loop_var_names:
            raise UnsupportedConstructError("assignment to a loop variable",
                                            name_tok.line, name_tok.col)
        if not self.at_op("=", ":="):
            bad = self.peek()
            raise ParseError(f"expected = or := after {name}", bad.line, bad.col)
        self.next()
        expr = self._parse_expr()
        self.expect_op(";")
        return n.Assign(name, expr)

    def _parse_if(self) -> n.Statement:
        self.expect_keyword("if")
        cond = self._parse_expr()
        self.expect_keyword("then")
        then_branch = self._parse_statements(("elsif", "else", "end"))
        if self.at_keyword("elsif"):
            # parse the ELSIF chain as a nested IF in the else branch
            nested = self._parse_if_tail()
            return n.If(cond, then_branch, [nested])
        else_branch: list[n.Statement] = []
        if self.at_keyword("else"):
            self.next()
            else_branch = self._parse_statements(("end",))
        self.expect_keyword("end")
        self.expect_keyword("if")
        self.expect_op(";")
        return n.If(cond, then_branch, else_branch)

    def _parse_if_tail(self) -> n.Statement:
        self.expect_keyword("elsif")
        cond = self._parse_expr()
        self.expect_keyword("then")
        then_branch = self._parse_statements(("elsif", "else", "end"))
        if self.at_keyword("elsif"):
            nested = self._parse_if_tail()
            return n.If(cond, then_branch, [nested])
        else_branch = []
        if self.at_keyword("else"):
            self.next()
            else_branch = self._parse_statements(("end",))
        self.expect_keyword("end")
        self.expect_keyword("if")
        self.expect_op(";")
        return n.If(cond, then_branch, else_branch)

    @property
    def _loop_var_names(self) -> set[str]:
        return getattr(self, "_for_vars", set())

    def _parse_for(self, label: str | None) -> n.Statement:
        self.expect_keyword("for")
        var_tok = self.expect_name()
        var = var_tok.value
        if var in self.var_types:
            raise ParseError(f"loop variable {var} shadows an existing name",
                             var_tok.line, var_tok.col)
        self.expect_keyword("in")
        lo = self._parse_expr()
        peeked = self.peek()
        if not (peeked.kind == "op" and peeked.value == ".."):
            raise UnsupportedConstructError("FOR over a query (only integer ranges)",
                                            peeked.line, peeked.col)
        self.next()
        hi = self._parse_expr()
        self.expect_keyword("loop")
        self._declare(var, "int", var_tok.line, var_tok.col)
        if not hasattr(self, "_for_vars"):
            self._for_vars: set[str] = set()
        self._for_vars.add(var)
        self.loop_stack.append(label)
        body = self._parse_statements(("end",))
        self.loop_stack.pop()
        self._for_vars.discard(var)
        self.scope.remove(var)
        del self.var_types[var]
        self.expect_keyword("end")
        self.expect_keyword("loop")
        self.expect_op(";")
        return n.ForRange(var, lo, hi, body, label)

    def _parse_while(self, label: str | None) -> n.Statement:
        self.expect_keyword("while")
        cond = self._parse_expr()
        self.expect_keyword("loop")
        self.loop_stack.append(label)
        body = self._parse_statements(("end",))
        self.loop_stack.pop()
        self.expect_keyword("end")
        self.expect_keyword("loop")
        self.expect_op(";")
        return n.While(cond, body, label)

    def _parse_loop(self, label: str | None) -> n.Statement:
        self.expect_keyword("loop")
        self.loop_stack.append(label)
        body = self._parse_statements(("end",))
        self.loop_stack.pop()
        self.expect_keyword("end")
        self.expect_keyword("loop")
        self.expect_op(";")
        return n.Loop(body, label)

    def _check_loop_label(self, label: str | None, tok: Token) -> None:
        if not self.loop_stack:
            raise ParseError("EXIT/CONTINUE outside a loop", tok.line, tok.col)
        if label is not None and label not in self.loop_stack:
            raise ParseError(f"label {label} does not name an enclosing loop",
                             tok.line, tok.col)

    def _parse_exit(self) -> n.Statement:
        tok = self.expect_keyword("exit")
        label = None
        if self.peek().kind == "ident" and not self.at_keyword("when") \
                and self.peek().value not in _KEYWORDS:
            label = self.expect_name().value
        cond = None
        if self.at_keyword("when"):
            self.next()
            cond = self._parse_expr()
        self.expect_op(";")
        self._check_loop_label(label, tok)
        return n.Exit(label, cond)

    def _parse_continue(self) -> n.Statement:
        tok = self.expect_keyword("continue")
        label = None
        if self.peek().kind == "ident" and self.peek().value not in _KEYWORDS:
            label = self.expect_name().value
        if self.at_keyword("when"):
            bad = self.peek()
            raise UnsupportedConstructError("CONTINUE WHEN", bad.line, bad.col)
        self.expect_op(";")
        self._check_loop_label(label, tok)
        return n.Continue(label)

    # --- expressions ---

    def _parse_expr(self) -> n.Expr:
        return self._parse_or()

    def _parse_or(self) -> n.Expr:
        left = self._parse_and()
        while self.at_keyword("or"):
            self.next()
            left = n.BinOp("OR", left, self._parse_and())
        return left

    def _parse_and(self) -> n.Expr:
        left = self._parse_not()
        while self.at_keyword("and"):
            self.next()
            left = n.BinOp("AND", left, self._parse_not())
        return left

    def _parse_not(self) -> n.Expr:
        if self.at_keyword("not"):
            self.next()
            return n.UnOp("NOT", self._parse_not())
        return self._parse_comparison()

    def _parse_comparison(self) -> n.Expr:
        left = self._parse_additive()
        if self.at_op("=", "<>", "<", "<=", ">", ">="):
            op = self.next().value
            return n.BinOp(op, left, self._parse_additive())
        if self.at_keyword("is"):
            self.next()
            negated = False
            if self.at_keyword("not"):
                self.next()
                negated = True
            self.expect_keyword("null")
            test = n.Builtin("is_null", [left])
            return n.UnOp("NOT", test) if negated else test
        return left

    def _parse_additive(self) -> n.Expr:
        left = self._parse_multiplicative()
        while self.at_op("+", "-", "||"):
            op = self.next().value
            left = n.BinOp(op, left, self._parse_multiplicative())
        return left

    def _parse_multiplicative(self) -> n.Expr:
        left = self._parse_unary()
        while self.at_op("*", "/", "%"):
            op = self.next().value
            left = n.BinOp(op, left, self._parse_unary())
        return left

    def _parse_unary(self) -> n.Expr:
        if self.at_op("-"):
            self.next()
            arg = self._parse_unary()
            if isinstance(arg, n.Literal) and isinstance(arg.value, (int, float)) \
                    and not isinstance(arg.value, bool):
                return n.Literal(-arg.value)
            return n.UnOp("-", arg)
        return self._parse_primary()

    def _parse_primary(self) -> n.Expr:
        tok = self.next()
        if tok.kind == "int" or tok.kind == "float" or tok.kind == "string":
            return n.Literal(tok.value)
        if tok.kind == "op" and tok.value == "(":
            if self.at_keyword("select", "with"):
                return self._capture_query()
            inner = self._parse_expr()
            self.expect_op(")")
            return inner
        if tok.kind == "ident":
            word = tok.value
            if word in _UNSUPPORTED_KEYWORDS:
                raise UnsupportedConstructError(_UNSUPPORTED_KEYWORDS[word], tok.line, tok.col)
            if word == "null":
                return n.Literal(None)
            if word == "true":
                return n.Literal(True)
            if word == "false":
                return n.Literal(False)
            if word == "cast":
                self.expect_op("(")
                inner = self._parse_expr()
                self.expect_keyword("as")
                target = self._parse_type()
                self.expect_op(")")
                return n.Builtin(f"cast_{target}", [inner])
            if self.at_op("("):
                return self._parse_call(word, tok)
            if word in _KEYWORDS:
                raise ParseError(f"unexpected keyword {word.upper()}", tok.line, tok.col)
            if word not in self.var_types:
                raise UndeclaredVariableError(word, tok.line, tok.col)
            return n.Var(word)
        raise ParseError(f"expected an expression, found {self._show(tok)}", tok.line, tok.col)

    def _parse_call(self, name: str, tok: Token) -> n.Expr:
        self.expect_op("(")
        args: list[n.Expr] = []
        if not self.at_op(")"):
            while True:
                args.append(self._parse_expr())
                if self.at_op(","):
                    self.next()
                    continue
                break
        self.expect_op(")")
        if name == "random":
            if args:
                raise ParseError("random() takes no arguments", tok.line, tok.col)
            return n.Builtin("random", [])
        if name in BUILTIN_NAMES:
            return n.Builtin(name, args)
        raise UnsupportedConstructError(f"function {name}", tok.line, tok.col)

    def _capture_query(self) -> n.EmbeddedQuery:
        # the peeked SELECT/WITH token must be re-scanned as raw query text
        assert self._peeked is not None
        rewind = self._peeked
        self.lexer.pos = rewind.end_offset - len(str(rewind.value))
        # recompute line/col by rescanning is unnecessary: the token started
        # at (line, col) and we rewind exactly to its first character
        self.lexer.line = rewind.line
        self.lexer.col = rewind.col
        self._peeked = None
        text = self.lexer.capture_parenthesized()
        self._query_counter += 1
        qid = f"Q{self._query_counter}"
        params = _find_free_vars(text, self.scope)
        self.templates[qid] = n.QueryTemplate(qid, text, params, result_type="")
        return n.EmbeddedQuery(qid, params)


def parse_function(source: str) -> n.FunctionAst:
    """Parse one function definition and validate its invariants."""
    return Parser(source).parse_function()


def extract_embedded_queries(ast: n.FunctionAst) -> list[n.QueryTemplate]:
    """Embedded query templates in source order (one per occurrence)."""
    return list(ast.templates.values())


# --- static validation -------------------------------------------------------


def _guarantees_return(stmts: list[n.Statement]) -> bool:
    for s in stmts:
        if isinstance(s, n.Return):
            return True
        if isinstance(s, n.If) and s.else_branch:
            if _guarantees_return(s.then_branch) and _guarantees_return(s.else_branch):
                return True
        if isinstance(s, n.Loop):
            # a bare loop only falls through via EXIT; without one, every
            # leaving path runs through RETURN (or never terminates, which
            # the iteration cap turns into an error)
            if not _has_exit_for(s.body, s.label, depth=0):
                return True
    return False


def _has_exit_for(stmts: list[n.Statement], label: str | None, depth: int) -> bool:
    for s in stmts:
        if isinstance(s, n.Exit):
            if (s.label is None and depth == 0) or (s.label is not None and s.label == label):
                return True
        elif isinstance(s, n.If):
            if _has_exit_for(s.then_branch, label, depth) or _has_exit_for(s.else_branch, label, depth):
                return True
        elif isinstance(s, (n.ForRange, n.While, n.Loop)):
            if _has_exit_for(s.body, label, depth + 1):
                return True
    return False


def _check_all_paths_return(ast: n.FunctionAst) -> None:
    if not _guarantees_return(ast.body):
        raise ParseError(
            f"function {ast.name}: some control-flow path can reach the end "
            "of the body without RETURN"
        )


# --- embedded-query result typing --------------------------------------------


def _known_type(e: n.Expr, var_types: dict[str, str]) -> str | None:
    if isinstance(e, n.Literal):
        if e.value is None:
            return None
        from .values import type_of

        return type_of(e.value)
    if isinstance(e, n.Var):
        return var_types.get(e.name)
    if isinstance(e, n.BinOp):
        if e.op in ("AND", "OR", "=", "<>", "<", "<=", ">", ">="):
            return "bool"
        if e.op == "||":
            return "text"
        return _known_type(e.lhs, var_types) or _known_type(e.rhs, var_types)
    if isinstance(e, n.UnOp):
        if e.op == "NOT":
            return "bool"
        return _known_type(e.arg, var_types)
    if isinstance(e, n.Builtin):
        if e.name == "random":
            return "float"
        if e.name in BUILTIN_RESULT_TAGS:
            return BUILTIN_RESULT_TAGS[e.name]
        if e.name in ("sign", "abs"):
            return _known_type(e.args[0], var_types)
        return None
    return None


def _type_expr(e: n.Expr, expected: str | None, ast: n.FunctionAst,
               var_types: dict[str, str]) -> None:
    if isinstance(e, n.EmbeddedQuery):
        if expected is None:
            raise TypeMismatchError(
                f"cannot infer the result type of embedded query {e.query_id}"
            )
        ast.templates[e.query_id].result_type = expected
        return
    if isinstance(e, n.BinOp):
        if e.op in ("AND", "OR"):
            _type_expr(e.lhs, "bool", ast, var_types)
            _type_expr(e.rhs, "bool", ast, var_types)
        elif e.op in ("=", "<>", "<", "<=", ">", ">="):
            t = _known_type(e.lhs, var_types) or _known_type(e.rhs, var_types)
            _type_expr(e.lhs, t, ast, var_types)
            _type_expr(e.rhs, t, ast, var_types)
        elif e.op == "||":
            _type_expr(e.lhs, "text", ast, var_types)
            _type_expr(e.rhs, "text", ast, var_types)
        else:
            t = expected or _known_type(e.lhs, var_types) or _known_type(e.rhs, var_types)
            _type_expr(e.lhs, t, ast, var_types)
            _type_expr(e.rhs, t, ast, var_types)
        return
    if isinstance(e, n.UnOp):
        _type_expr(e.arg, "bool" if e.op == "NOT" else expected, ast, var_types)
        return
    if isinstance(e, n.Builtin):
        if e.name == "length":
            for a in e.args:
                _type_expr(a, "text", ast, var_types)
        elif e.name == "substr":
            _type_expr(e.args[0], "text", ast, var_types)
            for a in e.args[1:]:
                _type_expr(a, "int", ast, var_types)
        elif e.name in ("sign", "abs"):
            for a in e.args:
                _type_expr(a, _known_type(a, var_types) or expected, ast, var_types)
        else:
            for a in e.args:
                _type_expr(a, _known_type(a, var_types), ast, var_types)
        return
    # literals and vars need no downward typing


def _type_stmts(stmts: list[n.Statement], ast: n.FunctionAst,
                var_types: dict[str, str]) -> None:
    for s in stmts:
        if isinstance(s, n.Assign):
            _type_expr(s.expr, var_types[s.var], ast, var_types)
        elif isinstance(s, n.Return):
            _type_expr(s.expr, ast.return_type, ast, var_types)
        elif isinstance(s, n.If):
            _type_expr(s.cond, "bool", ast, var_types)
            _type_stmts(s.then_branch, ast, var_types)
            _type_stmts(s.else_branch, ast, var_types)
        elif isinstance(s, n.ForRange):
            _type_expr(s.lo, "int", ast, var_types)
            _type_expr(s.hi, "int", ast, var_types)
            inner = dict(var_types)
            inner[s.var] = "int"
            _type_stmts(s.body, ast, inner)
        elif isinstance(s, n.While):
            _type_expr(s.cond, "bool", ast, var_types)
            _type_stmts(s.body, ast, var_types)
        elif isinstance(s, n.Loop):
            _type_stmts(s.body, ast, var_types)
        elif isinstance(s, n.Exit) and s.cond is not None:
            _type_expr(s.cond, "bool", ast, var_types)


def _assign_query_types(ast: n.FunctionAst) -> None:
    var_types = dict(ast.params)
    for d in ast.declarations:
        var_types[d.name] = d.type
    for d in ast.declarations:
        if d.init is not None:
            _type_expr(d.init, d.type, ast, var_types)
    _type_stmts(ast.body, ast, var_types)
