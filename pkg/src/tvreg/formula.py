"""Mini-language for declaring which regression coefficients drift over time.

A model formula looks like R's Wilkinson-Rogers notation with two extra
call-style terms::

    y ~ 0 + x + rw1(~ z, beta = c(0, 1), sigma = c(0, 1))
    y ~ x1 + rw2(~ 0 + x2)

``rw1(~ ...)`` places a first-order random walk on the coefficients of the
inner terms; ``rw2(~ ...)`` uses an integrated (second-order) walk, which
penalizes curvature instead of level changes.  An inner formula has an
implicit time-varying intercept unless it starts with ``0 +``; the outer
right-hand side likewise has an implicit time-invariant intercept.  ``beta``
gives the normal prior (mean, sd) for each coefficient's value at the first
time point, ``sigma`` the half-normal-style prior (normal truncated at zero)
for the walk's noise sd.

The parser is a hand-rolled lexer + recursive descent over this grammar::

    formula := IDENT "~" rhs
    rhs     := term ("+" term)*
    term    := "0" | "1" | IDENT | rwcall
    rwcall  := ("rw1" | "rw2") "(" "~" iterm ("+" iterm)* ("," kwarg)* ")"
    iterm   := "0" | "1" | IDENT
    kwarg   := ("beta" | "sigma") "=" "c" "(" number "," number ")"

Identifiers match ``[A-Za-z_][A-Za-z0-9_.]*``.  Whitespace is insignificant.
Any malformed input raises :class:`~tvreg.errors.FormulaSyntaxError`;
semantic problems raise the dedicated error types.  Every error raised while
parsing carries the 0-based character ``position`` of the offending token.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum

from .errors import (
    BadPriorError,
    DoubleInterceptError,
    DuplicateTermError,
    FormulaSyntaxError,
)

DEFAULT_BETA_PRIOR = (0.0, 10.0)
DEFAULT_SIGMA_PRIOR = (0.0, 10.0)

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_.]*")
_NUMBER_RE = re.compile(r"(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?")


class TokenType(Enum):
    IDENT = "identifier"
    NUMBER = "number"
    TILDE = "'~'"
    PLUS = "'+'"
    MINUS = "'-'"
    COMMA = "','"
    LPAREN = "'('"
    RPAREN = "')'"
    EQUALS = "'='"
    EOF = "end of formula"


@dataclass(frozen=True)
class Token:
    type: TokenType
    text: str
    position: int


@dataclass(frozen=True)
class RwBlock:
    """One random-walk block: which columns drift, and their priors.

    ``order`` is 1 (level walk) or 2 (integrated walk).  ``beta_prior`` is the
    (mean, sd) normal prior shared by the block's initial coefficient values;
    ``sigma_prior`` the (mean, sd) of the zero-truncated normal prior on the
    walk noise sd.
    """

    order: int
    intercept: bool
    terms: tuple[str, ...]
    beta_prior: tuple[float, float] = DEFAULT_BETA_PRIOR
    sigma_prior: tuple[float, float] = DEFAULT_SIGMA_PRIOR

    def __post_init__(self):
        if self.order not in (1, 2):
            raise ValueError("walk order must be 1 or 2")
        if not self.terms and not self.intercept:
            raise ValueError("a walk block needs an intercept or at least one term")
        for name, (_, sd) in (("beta", self.beta_prior), ("sigma", self.sigma_prior)):
            if not (sd > 0.0):
                raise BadPriorError(f"{name} prior sd must be positive, got {sd!r}")


@dataclass(frozen=True)
class FormulaAst:
    """Parsed formula: response, fixed part, and the random-walk blocks."""

    response: str
    intercept_fixed: bool
    fixed_terms: tuple[str, ...]
    rw1_blocks: tuple[RwBlock, ...] = field(default=())
    rw2_blocks: tuple[RwBlock, ...] = field(default=())

    @property
    def n_coef(self) -> int:
        n = int(self.intercept_fixed) + len(self.fixed_terms)
        for blk in self.rw1_blocks + self.rw2_blocks:
            n += int(blk.intercept) + len(blk.terms)
        return n


def _lex(text: str) -> list[Token]:
    tokens = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        simple = {
            "~": TokenType.TILDE,
            "+": TokenType.PLUS,
            "-": TokenType.MINUS,
            ",": TokenType.COMMA,
            "(": TokenType.LPAREN,
            ")": TokenType.RPAREN,
            "=": TokenType.EQUALS,
        }.get(ch)
        if simple is not None:
            tokens.append(Token(simple, ch, i))
            i += 1
            continue
        m = _NUMBER_RE.match(text, i)
        if m:
            tokens.append(Token(TokenType.NUMBER, m.group(0), i))
            i = m.end()
            continue
        m = _IDENT_RE.match(text, i)
        if m:
            tokens.append(Token(TokenType.IDENT, m.group(0), i))
            i = m.end()
            continue
        raise FormulaSyntaxError(f"unexpected character {ch!r}", i)
    tokens.append(Token(TokenType.EOF, "", n))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _lex(text)
        self.pos = 0
        # every term identifier in reading order (outer and inner), for the
        # cross-context duplicate checks, and one anchor per intercept
        # contributor so semantic errors can point into the text
        self._term_tokens: list[Token] = []
        self._intercept_anchors: list[int] = []

    # -- token plumbing ----------------------------------------------------

    def _peek(self) -> Token:
        return self.tokens[self.pos]

    def _advance(self) -> Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def _expect(self, ttype: TokenType) -> Token:
        tok = self._peek()
        if tok.type is not ttype:
            got = tok.text or "end of formula"
            raise FormulaSyntaxError(f"expected {ttype.value}, got {got!r}", tok.position)
        return self._advance()

    # -- grammar -----------------------------------------------------------

    def parse(self) -> FormulaAst:
        response = self._expect(TokenType.IDENT).text
        tilde = self._expect(TokenType.TILDE)
        intercept, fixed, blocks = self._term_list(allow_rw=True)
        self._expect(TokenType.EOF)
        if not intercept and not fixed and not blocks:
            raise FormulaSyntaxError("formula has no coefficients", len(self.text))

        seen: set[str] = set()
        for tok in self._term_tokens:
            if tok.text == response:
                raise DuplicateTermError(
                    f"response {response!r} also used as a term", tok.position
                )
            if tok.text in seen:
                raise DuplicateTermError(
                    f"term {tok.text!r} appears in more than one place", tok.position
                )
            seen.add(tok.text)

        # the implicit fixed intercept reads first, anchored at the '~'
        anchors = list(self._intercept_anchors)
        if intercept:
            anchors.insert(0, tilde.position)
        if len(anchors) > 1:
            raise DoubleInterceptError(
                "at most one intercept is allowed across the fixed part and "
                "all rw blocks; suppress the extras with '0 +'",
                anchors[1],
            )

        return FormulaAst(
            response=response,
            intercept_fixed=intercept,
            fixed_terms=tuple(fixed),
            rw1_blocks=tuple(b for b in blocks if b.order == 1),
            rw2_blocks=tuple(b for b in blocks if b.order == 2),
        )

    def _term_list(self, allow_rw: bool):
        """Parse ``term (+ term)*``; returns (intercept, names, rw_blocks)."""
        saw_zero = saw_one = False
        zero_pos = one_pos = -1
        names: list[str] = []
        blocks: list[RwBlock] = []
        while True:
            tok = self._peek()
            if tok.type is TokenType.NUMBER:
                self._advance()
                if tok.text == "0":
                    if saw_zero:
                        raise DuplicateTermError("'0' appears twice", tok.position)
                    saw_zero, zero_pos = True, tok.position
                elif tok.text == "1":
                    if saw_one:
                        raise DuplicateTermError("'1' appears twice", tok.position)
                    saw_one, one_pos = True, tok.position
                else:
                    raise FormulaSyntaxError(
                        f"expected a term, got number {tok.text!r}", tok.position
                    )
            elif tok.type is TokenType.IDENT:
                is_call = (
                    tok.text in ("rw1", "rw2")
                    and self.tokens[self.pos + 1].type is TokenType.LPAREN
                )
                if is_call and not allow_rw:
                    raise FormulaSyntaxError("rw calls cannot be nested", tok.position)
                if is_call:
                    blocks.append(self._rwcall())
                else:
                    self._advance()
                    if tok.text in names:
                        raise DuplicateTermError(
                            f"term {tok.text!r} appears twice", tok.position
                        )
                    names.append(tok.text)
                    self._term_tokens.append(tok)
            else:
                got = tok.text or "end of formula"
                raise FormulaSyntaxError(f"expected a term, got {got!r}", tok.position)
            if self._peek().type is TokenType.PLUS:
                self._advance()
            else:
                break
        if saw_zero and saw_one:
            raise DoubleInterceptError(
                "'0' and '1' in the same term list contradict each other",
                max(zero_pos, one_pos),
            )
        return not saw_zero, names, blocks

    def _rwcall(self) -> RwBlock:
        head = self._advance()  # rw1 / rw2
        order = 1 if head.text == "rw1" else 2
        self._expect(TokenType.LPAREN)
        self._expect(TokenType.TILDE)
        intercept, names, _ = self._term_list(allow_rw=False)
        beta_prior, sigma_prior = None, None
        while self._peek().type is TokenType.COMMA:
            self._advance()
            key = self._expect(TokenType.IDENT)
            if key.text not in ("beta", "sigma"):
                raise FormulaSyntaxError(
                    f"expected 'beta' or 'sigma', got {key.text!r}", key.position
                )
            self._expect(TokenType.EQUALS)
            value = self._prior_literal(key.text)
            if key.text == "beta":
                if beta_prior is not None:
                    raise FormulaSyntaxError("'beta' given twice", key.position)
                beta_prior = value
            else:
                if sigma_prior is not None:
                    raise FormulaSyntaxError("'sigma' given twice", key.position)
                sigma_prior = value
        self._expect(TokenType.RPAREN)
        if not intercept and not names:
            raise FormulaSyntaxError(
                f"{head.text}() declares no coefficients", head.position
            )
        if intercept:
            self._intercept_anchors.append(head.position)
        return RwBlock(
            order=order,
            intercept=intercept,
            terms=tuple(names),
            beta_prior=beta_prior if beta_prior is not None else DEFAULT_BETA_PRIOR,
            sigma_prior=sigma_prior if sigma_prior is not None else DEFAULT_SIGMA_PRIOR,
        )

    def _prior_literal(self, which: str) -> tuple[float, float]:
        head = self._expect(TokenType.IDENT)
        if head.text != "c":
            raise FormulaSyntaxError(f"expected 'c(mean, sd)', got {head.text!r}", head.position)
        self._expect(TokenType.LPAREN)
        mean = self._signed_number()
        self._expect(TokenType.COMMA)
        sd = self._signed_number()
        self._expect(TokenType.RPAREN)
        if not (math.isfinite(mean) and math.isfinite(sd) and sd > 0.0):
            raise BadPriorError(
                f"{which} prior needs a finite mean and sd > 0, got c({mean}, {sd})",
                head.position,
            )
        return (mean, sd)

    def _signed_number(self) -> float:
        sign = 1.0
        if self._peek().type is TokenType.MINUS:
            self._advance()
            sign = -1.0
        tok = self._expect(TokenType.NUMBER)
        return sign * float(tok.text)


def parse_formula(text: str) -> FormulaAst:
    """Parse a model formula into a :class:`FormulaAst`.

    Raises :class:`~tvreg.errors.FormulaSyntaxError` for malformed input,
    :class:`~tvreg.errors.DuplicateTermError` if a column is used twice,
    :class:`~tvreg.errors.DoubleInterceptError` for more than one intercept
    and :class:`~tvreg.errors.BadPriorError` for unusable prior literals.
    """
    if not isinstance(text, str):
        raise TypeError("formula must be a string")
    return _Parser(text).parse()


def _format_number(x: float) -> str:
    return repr(int(x)) if float(x).is_integer() and abs(x) < 1e16 else repr(float(x))


def _format_block(blk: RwBlock) -> str:
    inner = list(blk.terms)
    if not blk.intercept:
        inner = ["0"] + inner
    elif not inner:
        inner = ["1"]
    bp = ", ".join(_format_number(v) for v in blk.beta_prior)
    sp = ", ".join(_format_number(v) for v in blk.sigma_prior)
    return (
        f"rw{blk.order}(~ " + " + ".join(inner) + f", beta = c({bp}), sigma = c({sp}))"
    )


def format_formula(ast: FormulaAst) -> str:
    """Render an AST back to canonical formula text.

    The output always spells out priors and intercept suppression, so
    ``parse_formula(format_formula(ast)) == ast`` for every valid AST.
    """
    terms = list(ast.fixed_terms)
    if not ast.intercept_fixed:
        terms = ["0"] + terms
    elif not terms and not (ast.rw1_blocks or ast.rw2_blocks):
        terms = ["1"]
    terms += [_format_block(b) for b in ast.rw1_blocks]
    terms += [_format_block(b) for b in ast.rw2_blocks]
    return f"{ast.response} ~ " + " + ".join(terms)
