"""Final-answer extraction, canonicalization, and the binary correctness metric.

Answers come in two kinds. ``numeric`` answers (grade-school word problems and
their harder variant) are exact rationals: canonical form is a bare integer,
a terminating decimal with no trailing zeros, or ``a/b`` in lowest terms, with
no leading ``+`` and ``-0`` collapsed to ``0``. ``expression`` answers
(competition math) are compared at the string level after a deterministic
LaTeX cleanup; no computer-algebra equivalence is attempted, so ``0.5`` and
``1/2`` stay distinct unless they canonicalize identically.

Extraction cues, in last-occurrence-wins order, are ``####``, ``answer is``,
``final answer`` and ``\\boxed{`` (all case-insensitive). Grades are plain
ints in {0, 1}; extraction failure always grades 0.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from typing import Optional

NUMERIC = "numeric"
EXPRESSION = "expression"

_NUMERIC_CUES = ("####", "answer is", "final answer", "\\boxed{")
_EXPR_CUES = ("answer is", "final answer", "answer:")

# Digits with comma grouping (comma only between digits), optional decimal
# part, optional exponent; a bare leading ".5" is accepted.
_NUM_TOKEN = re.compile(
    r"[-+]?(?:\d(?:\d|,(?=\d))*(?:\.\d+)?|\.\d+)(?:[eE][-+]?\d+)?"
)

_SIZE_COMMANDS = (
    "\\Biggl", "\\Biggr", "\\biggl", "\\biggr", "\\Bigg", "\\bigg",
    "\\Bigl", "\\Bigr", "\\bigl", "\\bigr", "\\Big", "\\big",
)
_SPACING_COMMANDS = ("\\quad", "\\qquad", "\\!", "\\,", "\\;", "\\:")


class ExtractionError(ValueError):
    """No candidate final answer could be found in a completion."""


@dataclass(frozen=True)
class Answer:
    """A canonicalized final answer.

    ``canonical`` is a fixed point of normalization. ``numeric_value`` holds
    the exact rational for numeric answers that parsed cleanly, else None.
    """

    kind: str
    canonical: str
    numeric_value: Optional[Fraction]
    raw: str


@dataclass(frozen=True)
class EvalOutcome:
    question_id: str
    predicted: Optional[Answer]
    grade: int


def _match_braces(text: str, open_idx: int) -> Optional[int]:
    depth = 0
    for i in range(open_idx, len(text)):
        if text[i] == "{":
            depth += 1
        elif text[i] == "}":
            depth -= 1
            if depth == 0:
                return i + 1
    return None


def _last_cue(text: str, cues) -> Optional[tuple[int, str]]:
    lowered = text.lower()
    best = None
    for cue in cues:
        pos = lowered.rfind(cue)
        if pos >= 0 and (best is None or pos > best[0]):
            best = (pos, cue)
    return best


def _extract_numeric_token(text: str) -> Optional[str]:
    hit = _last_cue(text, _NUMERIC_CUES)
    if hit is not None:
        pos, cue = hit
        if cue == "\\boxed{":
            close = _match_braces(text, pos + len(cue) - 1)
            if close is not None:
                m = _NUM_TOKEN.search(text, pos + len(cue), close - 1)
                if m:
                    return m.group(0)
        else:
            m = _NUM_TOKEN.search(text, pos + len(cue))
            if m:
                return m.group(0)
    matches = _NUM_TOKEN.findall(text)
    return matches[-1] if matches else None


def _extract_expression_text(text: str) -> Optional[str]:
    pos = text.rfind("\\boxed{")
    if pos >= 0:
        close = _match_braces(text, pos + len("\\boxed{") - 1)
        if close is not None:
            return text[pos + len("\\boxed{"): close - 1]
    hit = _last_cue(text, _EXPR_CUES)
    if hit is None:
        return None
    tail = text[hit[0] + len(hit[1]):]
    line = tail.split("\n", 1)[0].strip()
    if line.startswith(":"):
        line = line[1:].strip()
    if line.endswith("."):
        line = line[:-1].rstrip()
    return line or None


def _parse_rational(s: str) -> Optional[Fraction]:
    if not s:
        return None
    if "/" in s:
        num, _, den = s.partition("/")
        try:
            return Fraction(int(num), int(den))
        except (ValueError, ZeroDivisionError):
            return None
    try:
        return Fraction(Decimal(s))
    except (InvalidOperation, ValueError, ArithmeticError):
        return None


def _render_rational(value: Fraction) -> str:
    if value == 0:
        return "0"
    if value.denominator == 1:
        return str(value.numerator)
    den = value.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        return f"{value.numerator}/{value.denominator}"
    scale = max(twos, fives)
    scaled = abs(value.numerator) * 10 ** scale // value.denominator
    digits = str(scaled).rjust(scale + 1, "0")
    whole, frac = digits[:-scale], digits[-scale:].rstrip("0")
    sign = "-" if value.numerator < 0 else ""
    return sign + (f"{whole}.{frac}" if frac else whole)


def normalize_numeric(raw: str) -> str:
    """Canonical numeric form; unparseable input falls back to its trimmed self."""
    s = re.sub(r"[\s,$€£%]", "", raw)
    value = _parse_rational(s)
    if value is None:
        return raw.strip()
    return _render_rational(value)


def _drop_spans(s: str, command: str) -> str:
    while True:
        pos = s.find(command + "{")
        if pos < 0:
            return s
        close = _match_braces(s, pos + len(command))
        if close is None:
            return s
        s = s[:pos] + s[close:]


def _convert_fracs(s: str) -> str:
    pos = s.find("\\frac")
    if pos < 0:
        return s
    i = pos + len("\\frac")
    args = []
    for _ in range(2):
        if i >= len(s):
            return s[: pos + 1] + _convert_fracs(s[pos + 1:])
        if s[i] == "{":
            close = _match_braces(s, i)
            if close is None:
                return s[: pos + 1] + _convert_fracs(s[pos + 1:])
            args.append(s[i + 1: close - 1])
            i = close
        elif s[i] == "\\":
            j = i + 1
            while j < len(s) and s[j].isalpha():
                j += 1
            args.append(s[i:j])
            i = j
        else:
            args.append(s[i])
            i += 1
    rendered = []
    for arg in args:
        arg = _convert_fracs(arg)
        rendered.append(f"({arg})" if len(arg) > 1 else arg)
    return s[:pos] + rendered[0] + "/" + rendered[1] + _convert_fracs(s[i:])


def normalize_expression(raw: str) -> str:
    """Deterministic LaTeX cleanup; idempotent."""
    s = re.sub(r"\s+", "", raw)
    s = s.replace("\\$", "").replace("$", "")
    while True:
        pos = s.find("\\boxed{")
        if pos < 0:
            break
        close = _match_braces(s, pos + len("\\boxed{") - 1)
        if close is None:
            break
        s = s[:pos] + s[pos + len("\\boxed{"): close - 1] + s[close:]
    s = s.replace("\\left", "").replace("\\right", "")
    for cmd in _SIZE_COMMANDS:
        s = s.replace(cmd, "")
    for cmd in _SPACING_COMMANDS:
        s = s.replace(cmd, "")
    s = _drop_spans(s, "\\text")
    s = _drop_spans(s, "\\mbox")
    s = s.replace("\\dfrac", "\\frac").replace("\\tfrac", "\\frac").replace("\\cfrac", "\\frac")
    s = _convert_fracs(s)
    s = s.replace("\\%", "%")
    s = s.replace("^{\\circ}", "^\\circ")
    return s


def normalize_answer(raw: str, kind: str) -> str:
    """Canonical string for a raw answer under a dataset kind's rules."""
    if kind == "math":
        return normalize_expression(raw)
    return normalize_numeric(raw)


def make_answer(raw: str, kind: str) -> Answer:
    """Build an Answer from an already-extracted raw answer span."""
    if kind == "math":
        return Answer(EXPRESSION, normalize_expression(raw), None, raw)
    canonical = normalize_numeric(raw)
    return Answer(NUMERIC, canonical, _parse_rational(re.sub(r"[\s,$€£%]", "", raw)), raw)


def extract_final_answer(completion: str, kind: str) -> Answer:
    """Extract and canonicalize the final answer from a model completion.

    Raises ExtractionError when no candidate is present; callers record
    grade 0 for those.
    """
    if not completion:
        raise ExtractionError("empty completion")
    if kind == "math":
        expr = _extract_expression_text(completion)
        if expr is None:
            raise ExtractionError("no boxed expression or answer cue found")
        return Answer(EXPRESSION, normalize_expression(expr), None, expr)
    token = _extract_numeric_token(completion)
    if token is None:
        raise ExtractionError("no numeric answer found")
    return Answer(NUMERIC, normalize_numeric(token), _parse_rational(re.sub(r"[\s,$€£%]", "", token)), token)


def grade(predicted: Answer, gold: Answer) -> int:
    """1 iff the answers are equal; numeric answers compare on exact values."""
    if predicted.numeric_value is not None and gold.numeric_value is not None:
        return int(predicted.numeric_value == gold.numeric_value)
    return int(predicted.canonical == gold.canonical)


def judge_completion(question_id: str, completion: str, gold: Answer, kind: str) -> EvalOutcome:
    """Extract and grade one completion, mapping extraction failure to grade 0."""
    try:
        predicted = extract_final_answer(completion, kind)
    except ExtractionError:
        return EvalOutcome(question_id, None, 0)
    return EvalOutcome(question_id, predicted, grade(predicted, gold))


def accuracy(outcomes) -> float:
    """Mean grade over a nonempty outcome list."""
    outcomes = list(outcomes)
    if not outcomes:
        raise ValueError("accuracy of an empty outcome list is undefined")
    return sum(o.grade for o in outcomes) / len(outcomes)
