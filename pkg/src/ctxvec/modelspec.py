"""Model-string grammar.

Experiment-table row labels map 1:1 to command-line model strings:

    T                      text skip-gram
    L                      appearance max-margin baseline
    O | P | P_full         visual context models
    Sp(BASE, δ|c, ⊕|b)     spatial variants (ASCII aliases: delta/d, c/cat,
                           concat, b/bilinear)
    A+B                    joint training, losses summed over shared embeddings
    A⊕B                    sequential combination (concatenate then PCA);
                           "concat" is accepted as an ASCII spelling of ⊕

Whitespace is ignored everywhere.  format_model(parse_model(s)) yields the
canonical spelling (no spaces, unicode δ and ⊕).
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import UsageError
from .objectives import (
    BASE_O,
    BASE_P,
    BASE_P_FULL,
    FUSION_BILINEAR,
    FUSION_CONCAT,
    SPATIAL_CATEGORICAL,
    SPATIAL_DELTA,
    ContextModelKind,
    LossTermWeights,
)

GRAMMAR_HELP = (
    "model grammar: terms T, L, O, P, P_full, Sp(O|P|P_full, δ|delta|c|categorical, "
    "⊕|concat|b|bilinear) joined with '+' (joint) or '⊕'/' concat ' (sequential), "
    "e.g. \"O+T\", \"Sp(O,c,b)+T\", \"O⊕T\""
)

_SPATIAL_ALIASES = {
    "δ": SPATIAL_DELTA, "d": SPATIAL_DELTA, "delta": SPATIAL_DELTA,
    "c": SPATIAL_CATEGORICAL, "cat": SPATIAL_CATEGORICAL,
    "categorical": SPATIAL_CATEGORICAL,
}
_FUSION_ALIASES = {
    "⊕": FUSION_CONCAT, "concat": FUSION_CONCAT,
    "b": FUSION_BILINEAR, "bilinear": FUSION_BILINEAR, "bilin": FUSION_BILINEAR,
}
_BASE_ALIASES = {"o": BASE_O, "p": BASE_P, "p_full": BASE_P_FULL, "pfull": BASE_P_FULL}

TERM_TEXT = "T"
TERM_BASELINE = "L"


@dataclass(frozen=True)
class ModelSpec:
    """A parsed model string: ordered terms plus the combination operator."""

    terms: tuple          # each entry: "T" | "L" | ContextModelKind
    sequential: bool = False

    def to_weights(self, alpha: float = 0.2, baseline_weight: float = 1.0) -> LossTermWeights:
        if self.sequential:
            raise UsageError("a sequential model cannot be trained jointly")
        weights = LossTermWeights(
            text_on=TERM_TEXT in self.terms,
            visual=tuple(
                (t, 1.0) for t in self.terms if isinstance(t, ContextModelKind)
            ),
            baseline_weight=baseline_weight if TERM_BASELINE in self.terms else 0.0,
            alpha=alpha,
        )
        weights.validate()
        return weights


def _split_top_level(s: str):
    """Split on '+' and '⊕' outside parentheses, keeping the operators."""
    parts, ops = [], []
    depth = 0
    cur = []
    for ch in s:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise UsageError(f"unbalanced parentheses in model string; {GRAMMAR_HELP}")
        if depth == 0 and ch in "+⊕":
            parts.append("".join(cur))
            ops.append(ch)
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    if depth != 0:
        raise UsageError(f"unbalanced parentheses in model string; {GRAMMAR_HELP}")
    return parts, ops


def _parse_term(term: str):
    raw = term.strip()
    low = raw.lower()
    if low == "t":
        return TERM_TEXT
    if low == "l":
        return TERM_BASELINE
    if low in _BASE_ALIASES:
        return ContextModelKind(_BASE_ALIASES[low])
    if low.startswith("sp(") and raw.endswith(")"):
        inner = raw[raw.index("(") + 1 : -1]
        args = [a.strip() for a in inner.split(",")]
        if len(args) != 3:
            raise UsageError(f"Sp takes 3 arguments, got {len(args)}; {GRAMMAR_HELP}")
        base = _BASE_ALIASES.get(args[0].lower())
        spatial = _SPATIAL_ALIASES.get(args[1] if args[1] == "δ" else args[1].lower())
        fusion = _FUSION_ALIASES.get(args[2] if args[2] == "⊕" else args[2].lower())
        if base is None or spatial is None or fusion is None:
            raise UsageError(f"bad Sp arguments {raw!r}; {GRAMMAR_HELP}")
        return ContextModelKind(base, spatial, fusion)
    raise UsageError(f"unknown model term {raw!r}; {GRAMMAR_HELP}")


def parse_model(s: str) -> ModelSpec:
    compact = _rewrite_infix_concat(s)
    if not compact:
        raise UsageError(f"empty model string; {GRAMMAR_HELP}")
    parts, ops = _split_top_level(compact)
    terms = tuple(_parse_term(p) for p in parts)
    op_kinds = set(ops)
    if op_kinds == {"⊕"}:
        sequential = True
    elif op_kinds <= {"+"}:
        sequential = False
    else:
        raise UsageError(f"cannot mix '+' and '⊕' operators; {GRAMMAR_HELP}")
    if len(terms) != len(set(terms)):
        raise UsageError(f"duplicate model terms in {s!r}")
    return ModelSpec(terms, sequential=sequential)


def _rewrite_infix_concat(s: str) -> str:
    # " concat " between terms means the sequential operator; inside Sp(...)
    # the same word is a fusion argument and must be left alone.
    out = []
    depth = 0
    tokens = s.replace("(", " ( ").replace(")", " ) ").split()
    for tok in tokens:
        if tok == "(":
            depth += 1
        elif tok == ")":
            depth -= 1
        if tok.lower() == "concat" and depth == 0:
            out.append("⊕")
        else:
            out.append(tok)
    return "".join(out).replace(" ", "")


def format_term(term) -> str:
    if isinstance(term, str):
        return term
    if not term.is_spatial:
        return term.base
    sp = "δ" if term.spatial == SPATIAL_DELTA else "c"
    fu = "⊕" if term.fusion == FUSION_CONCAT else "b"
    return f"Sp({term.base},{sp},{fu})"


def format_model(spec: ModelSpec) -> str:
    op = "⊕" if spec.sequential else "+"
    return op.join(format_term(t) for t in spec.terms)
