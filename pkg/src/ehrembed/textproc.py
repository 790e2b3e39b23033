"""Shared sub-word vocabulary and event tokenization.

The same Vocabulary serves every hospital and every value strategy: it is
what makes two differently-coded hospitals comparable. Numerals receive
special treatment per strategy:

  VA        value rendered as text and appended; digit runs segmented by
            greedy longest match over the inventory (so '1351' may split
            as '13','51' when those sub-words exist)
  DSVA      every digit run emitted as single-digit tokens
  DSVA_DPE  as DSVA, plus a place value per digit token (3 for hundreds,
            1 for units, -1 for tenths, ...)
  VC        the value's rendered numerals are removed from the token
            stream and routed to a scalar channel instead; unit text stays
"""

import re
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigurationError

PAD, UNK, CLS, MASK = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<unk>", "<cls>", "<mask>")
DIGIT_TOKENS = tuple("0123456789") + (".",)
MAX_DESC_TOKENS = 64
PLACE_CLAMP = 12

# alpha run | digit run | any single non-space symbol
_PIECE_RE = re.compile(r"[a-z]+|[0-9]+|[^a-z0-9\s]")


class ValueStrategy(str, Enum):
    VA = "va"
    DSVA = "dsva"
    DSVA_DPE = "dsva_dpe"
    VC = "vc"


@dataclass(frozen=True)
class TokenizedDescription:
    token_ids: tuple
    place_ids: tuple
    value_scalar: float | None
    truncated: bool

    def __len__(self):
        return len(self.token_ids)


class Vocabulary:
    """Bijective token <-> id map with fixed special and digit blocks."""

    def __init__(self, tokens):
        self.id_to_token = list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ConfigurationError("vocabulary contains duplicate tokens")
        expected = SPECIAL_TOKENS + DIGIT_TOKENS
        if tuple(self.id_to_token[: len(expected)]) != expected:
            raise ConfigurationError("vocabulary must start with special and digit tokens")

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def tokens_of(self, ids) -> list:
        return [self.id_to_token[i] for i in ids]

    def digest(self) -> str:
        import hashlib

        return hashlib.sha256("\n".join(self.id_to_token).encode("utf-8")).hexdigest()

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for token in self.id_to_token:
                fh.write(token + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh])


def pieces(text: str) -> list:
    """Lower-case and split into alpha runs, digit runs, and single symbols."""
    return _PIECE_RE.findall(text.lower())


def render_value(value) -> str:
    """Canonical decimal text for a numeric value ('' when absent)."""
    if value is None:
        return ""
    f = float(value)
    if f == int(f) and abs(f) < 1e15:
        return str(int(f))
    return np.format_float_positional(f, precision=6, trim="-")


def build_vocab(corpus, max_size: int = 4096, min_freq: int = 1,
                extra_tokens=()) -> Vocabulary:
    """Frequency-built sub-word inventory over a description corpus.

    Whole non-numeric words at or above ``min_freq`` become tokens, plus a
    single-character fallback for every character seen, so tokenization is
    total. Pure digit runs never become whole-word tokens (digits stay
    single characters, keeping the digit-split strategies expressible);
    multi-digit sub-words can be injected via ``extra_tokens``.
    Deterministic: depends only on the corpus as a multiset.
    """
    base = list(SPECIAL_TOKENS + DIGIT_TOKENS)
    if max_size < len(base):
        raise ConfigurationError(
            f"max_size={max_size} below the {len(base)} reserved special/digit tokens")

    counts = {}
    chars = set()
    for description in corpus:
        for piece in pieces(description):
            chars.update(piece)
            if piece.isdigit():
                continue
            counts[piece] = counts.get(piece, 0) + 1

    tokens = list(base)
    seen = set(base)

    def emit(token):
        if token not in seen and len(tokens) < max_size:
            tokens.append(token)
            seen.add(token)

    for ch in sorted(chars):
        emit(ch)
    for token in sorted(extra_tokens):
        emit(token)
    for word, count in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        if count >= min_freq:
            emit(word)
    return Vocabulary(tokens)


def _greedy_match(piece: str, vocab: Vocabulary) -> list:
    """Greedy longest-match segmentation; unknown characters map to <unk>."""
    out = []
    start = 0
    while start < len(piece):
        end = len(piece)
        while end > start and piece[start:end] not in vocab:
            end -= 1
        if end == start:
            out.append(SPECIAL_TOKENS[UNK])
            start += 1
        else:
            out.append(piece[start:end])
            start = end
    return out


def _group_pieces(piece_list):
    """Merge digit runs with an embedded decimal point into numeric groups.

    Yields ('num', int_digits, frac_digits) or ('piece', text).
    """
    i = 0
    n = len(piece_list)
    while i < n:
        p = piece_list[i]
        if p.isdigit():
            if i + 2 < n and piece_list[i + 1] == "." and piece_list[i + 2].isdigit():
                yield ("num", p, piece_list[i + 2])
                i += 3
            else:
                yield ("num", p, "")
                i += 1
        elif p == "." and i + 1 < n and piece_list[i + 1].isdigit():
            yield ("num", "", piece_list[i + 1])
            i += 2
        else:
            yield ("piece", p)
            i += 1


def _group_text(group):
    _, int_part, frac_part = group
    return int_part + "." + frac_part if frac_part else int_part


def _places(int_part: str, frac_part: str) -> list:
    """Place values for the digits (and the '.') of one numeric group."""
    k = len(int_part)
    out = [min(k - i, PLACE_CLAMP) for i in range(k)]
    if frac_part:
        out.append(0)  # the decimal point itself carries no place
        out.extend(-min(i + 1, PLACE_CLAMP) for i in range(len(frac_part)))
    return out


def tokenize(description: str, value, unit, strategy: ValueStrategy,
             vocab: Vocabulary, max_desc_tokens: int = MAX_DESC_TOKENS) -> TokenizedDescription:
    """Convert one event into ids under the given value strategy.

    Total function: unknown tokens become <unk>, overlong streams are
    truncated (flagged). The output always starts with <cls>.
    """
    rendered = render_value(value)
    text = description
    if strategy in (ValueStrategy.VA, ValueStrategy.DSVA, ValueStrategy.DSVA_DPE):
        if rendered:
            text = f"{text} {rendered}"
        if unit:
            text = f"{text} {unit}"
    elif strategy is ValueStrategy.VC:
        if unit:
            text = f"{text} {unit}"

    tokens = [SPECIAL_TOKENS[CLS]]
    places = [0]
    for group in _group_pieces(pieces(text)):
        if group[0] == "piece":
            for token in _greedy_match(group[1], vocab):
                tokens.append(token)
                places.append(0)
            continue
        _, int_part, frac_part = group
        if strategy is ValueStrategy.VC and rendered and _group_text(group) == rendered:
            continue  # the value lives in the scalar channel instead
        if strategy in (ValueStrategy.DSVA, ValueStrategy.DSVA_DPE):
            digit_tokens = list(int_part)
            if frac_part:
                digit_tokens.append(".")
                digit_tokens.extend(frac_part)
            group_places = _places(int_part, frac_part)
        else:  # VA (and VC leftovers): greedy over the inventory
            digit_tokens = _greedy_match(int_part, vocab) if int_part else []
            if frac_part:
                digit_tokens.append(".")
                digit_tokens.extend(_greedy_match(frac_part, vocab))
            group_places = [0] * len(digit_tokens)
        tokens.extend(digit_tokens)
        if strategy is ValueStrategy.DSVA_DPE:
            places.extend(group_places)
        else:
            places.extend([0] * len(digit_tokens))

    truncated = len(tokens) > max_desc_tokens
    tokens = tokens[:max_desc_tokens]
    places = places[:max_desc_tokens]
    value_scalar = float(value) if (strategy is ValueStrategy.VC and value is not None) else None
    return TokenizedDescription(
        token_ids=tuple(vocab.id_of(t) for t in tokens),
        place_ids=tuple(places),
        value_scalar=value_scalar,
        truncated=truncated,
    )


def encode_code_identity(code, value, strategy: ValueStrategy) -> str:
    """Key under which a code-lookup embedding table indexes this event.

    Aggregation strategies fold the rendered value into the key (a new
    code per distinct value); the concatenation strategy keys on the code
    alone, since the value travels through its own channel.
    """
    if strategy is ValueStrategy.VC:
        return str(code)
    return f"{code}\x1f{render_value(value)}"


def place_id_index(place: int) -> int:
    """Map a signed place value to a dense embedding row (0 = no place)."""
    if place == 0:
        return 0
    if place > 0:
        return min(place, PLACE_CLAMP)
    return PLACE_CLAMP + min(-place, PLACE_CLAMP)


PLACE_TABLE_SIZE = 2 * PLACE_CLAMP + 1
