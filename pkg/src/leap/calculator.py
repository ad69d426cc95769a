"""Recursive-descent evaluator for arithmetic formulas.

Grammar (standard precedence, carets bind tightest and associate right):

    expr    := term (('+' | '-') term)*
    term    := factor (('*' | '/' | '%') factor)*
    factor  := '-' factor | power
    power   := atom ('^' factor)?
    atom    := number | '(' expr ')'

'%' is remainder with the sign of the dividend; '^' is real exponentiation.
Unary minus binds after '^', so "-2^2" is -4 and "-(2^3)^2" is -64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import CalculatorError

__all__ = ["evaluate"]

_OPERATOR_CHARS = "+-*/%^()"


@dataclass(frozen=True)
class _Token:
    kind: str  # "number" | "op" | "end"
    text: str
    column: int  # 1-based position in the formula
    value: float = 0.0


def _tokenize(formula: str) -> list[_Token]:
    tokens: list[_Token] = []
    i = 0
    n = len(formula)
    while i < n:
        ch = formula[i]
        if ch.isspace():
            i += 1
            continue
        if ch in _OPERATOR_CHARS:
            tokens.append(_Token("op", ch, i + 1))
            i += 1
            continue
        if ch.isdigit():
            start = i
            while i < n and formula[i].isdigit():
                i += 1
            if i < n and formula[i] == ".":
                i += 1
                if i >= n or not formula[i].isdigit():
                    raise CalculatorError("expected digits after decimal point", column=i + 1)
                while i < n and formula[i].isdigit():
                    i += 1
            text = formula[start:i]
            tokens.append(_Token("number", text, start + 1, value=float(text)))
            continue
        raise CalculatorError(f"unexpected character {ch!r}", column=i + 1)
    tokens.append(_Token("end", "", n + 1))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def expr(self) -> float:
        value = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.advance()
            right = self.term()
            value = value + right if op.text == "+" else value - right
        return value

    def term(self) -> float:
        value = self.factor()
        while self.peek().kind == "op" and self.peek().text in "*/%":
            op = self.advance()
            right = self.factor()
            if op.text == "*":
                value = value * right
            elif op.text == "/":
                if right == 0.0:
                    raise CalculatorError("division by zero")
                value = value / right
            else:
                if right == 0.0:
                    raise CalculatorError("remainder by zero")
                value = math.fmod(value, right)
        return value

    def factor(self) -> float:
        token = self.peek()
        if token.kind == "op" and token.text == "-":
            self.advance()
            return -self.factor()
        return self.power()

    def power(self) -> float:
        value = self.atom()
        token = self.peek()
        if token.kind == "op" and token.text == "^":
            self.advance()
            exponent = self.factor()
            try:
                value = math.pow(value, exponent)
            except (ValueError, OverflowError) as exc:
                raise CalculatorError(f"power is not a finite real: {exc}") from exc
        return value

    def atom(self) -> float:
        token = self.advance()
        if token.kind == "number":
            return token.value
        if token.kind == "op" and token.text == "(":
            value = self.expr()
            closing = self.advance()
            if closing.kind != "op" or closing.text != ")":
                raise CalculatorError("expected ')'", column=closing.column)
            return value
        if token.kind == "end":
            raise CalculatorError("unexpected end of formula", column=token.column)
        raise CalculatorError(f"unexpected {token.text!r}", column=token.column)


def evaluate(formula: str) -> float:
    """Evaluate an arithmetic formula to a finite real.

    Raises CalculatorError with a column for syntax defects, without one for
    math failures (division by zero, non-finite results).
    """
    parser = _Parser(_tokenize(formula))
    value = parser.expr()
    trailing = parser.peek()
    if trailing.kind != "end":
        raise CalculatorError(f"unexpected {trailing.text!r}", column=trailing.column)
    if not math.isfinite(value):
        raise CalculatorError("result is not finite")
    return value
