"""Balanced-bracket (Dyck-1) words: validation, labeling, generation, file IO.

A word is valid when every prefix has a non-negative bracket depth and the
full word returns to depth zero. The per-token prediction targets say which
bracket may legally follow: an opening bracket always may, a closing bracket
only while depth is positive.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from enum import Enum, IntEnum
from pathlib import Path

import numpy as np

from .errors import GenerationStalled, IndivisibleLength, NegativeDepth, ParseError

MAX_CONSECUTIVE_REJECTS = 10**6


class Token(IntEnum):
    OPEN = 0
    CLOSE = 1

    @property
    def char(self) -> str:
        return "(" if self is Token.OPEN else ")"


_CHAR_TO_TOKEN = {"(": Token.OPEN, ")": Token.CLOSE}


class SplitName(str, Enum):
    TRAIN = "TRAIN"
    VALIDATION = "VALIDATION"
    LONG = "LONG"
    VERYLONG = "VERYLONG"
    ZIGZAG = "ZIGZAG"


def depth_profile(tokens: list[Token] | tuple[Token, ...]) -> list[int]:
    """Running depth after each token; raises NegativeDepth on an early close."""
    if not tokens:
        raise ValueError("tokens must be non-empty")
    depth = 0
    out = []
    for idx, tok in enumerate(tokens):
        depth += 1 if tok is Token.OPEN or tok == Token.OPEN else -1
        if depth < 0:
            raise NegativeDepth(idx)
        out.append(depth)
    return out


@dataclass(frozen=True)
class DyckWord:
    """A complete balanced word with its depth profile."""

    tokens: tuple[Token, ...]
    depths: tuple[int, ...]

    def __post_init__(self):
        n = len(self.tokens)
        if n < 2 or n % 2 != 0:
            raise ValueError(f"word length must be even and >= 2, got {n}")
        if len(self.depths) != n:
            raise ValueError("depths and tokens must have equal length")
        if self.depths[-1] != 0:
            raise ValueError("word does not return to depth 0")

    @classmethod
    def from_tokens(cls, tokens) -> "DyckWord":
        toks = tuple(Token(t) for t in tokens)
        return cls(toks, tuple(depth_profile(toks)))

    @classmethod
    def from_text(cls, text: str) -> "DyckWord":
        try:
            toks = tuple(_CHAR_TO_TOKEN[ch] for ch in text)
        except KeyError as exc:
            raise ValueError(f"unknown symbol {exc.args[0]!r}") from None
        return cls.from_tokens(toks)

    @property
    def text(self) -> str:
        return "".join(t.char for t in self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class TargetSeq:
    """Per-position validity targets: column 0 = open-valid, column 1 = close-valid."""

    arr: np.ndarray  # (T, 2) float64 of 0.0 / 1.0

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return [(int(a), int(b)) for a, b in self.arr]

    def __len__(self) -> int:
        return self.arr.shape[0]


def next_targets(word: DyckWord) -> TargetSeq:
    """Open is always legal; close is legal exactly while depth stays positive."""
    arr = np.ones((len(word), 2), dtype=np.float64)
    arr[:, 1] = [1.0 if d > 0 else 0.0 for d in word.depths]
    return TargetSeq(arr)


@dataclass(frozen=True)
class GenSpec:
    """Sampling spec for one dataset split."""

    count: int
    min_len: int
    max_len: int
    pcfg_p: float = 0.5
    pcfg_q: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be positive")
        if not (2 <= self.min_len <= self.max_len):
            raise ValueError("need 2 <= min_len <= max_len")
        if self.min_len % 2 or self.max_len % 2:
            raise ValueError("length bounds must be even")
        if not (0.0 < self.pcfg_p < 1.0 and 0.0 < self.pcfg_q < 1.0):
            raise ValueError("pcfg probabilities must lie in (0,1)")
        if self.pcfg_p + self.pcfg_q >= 1.0:
            raise ValueError("pcfg_p + pcfg_q must be < 1")
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must fit in 64 bits")


@dataclass(frozen=True)
class ZigzagSpec:
    """One zigzag word: blocks of j opens then j closes, repeated to total_len."""

    j: int
    total_len: int

    def __post_init__(self):
        if self.j < 1 or self.total_len < 1:
            raise ValueError("j and total_len must be positive")


@dataclass
class DatasetSplit:
    name: SplitName
    words: list[DyckWord]

    def texts(self) -> set[str]:
        return {w.text for w in self.words}

    def __len__(self) -> int:
        return len(self.words)


# --- PCFG S -> "(" S ")" S -----------------------------------------------
#
# Each grammar slot either expands (emitting one bracket pair plus a nested
# slot and a continuation slot) or stops. The continuation slot and the root
# expand with probability pcfg_p, the nested slot with pcfg_q. Sampling is
# conditioned exactly on the requested length window, which draws from the
# same distribution as rejection resampling but stays feasible for windows
# (e.g. exactly 1000 tokens) whose unconditional mass is astronomically small.


class _PcfgTables:
    """Pair-count distributions and per-node split CDFs for one (p, q, N)."""

    def __init__(self, p: float, q: float, max_pairs: int):
        n = max_pairs
        pa = np.empty(n + 1)
        pb = np.empty(n + 1)
        pa[0] = 1.0 - p
        pb[0] = 1.0 - q
        split_cum: list[np.ndarray] = []
        for m in range(n):
            row = pb[: m + 1] * pa[m::-1]
            cum = np.cumsum(row)
            split_cum.append(cum)
            pa[m + 1] = p * cum[-1]
            pb[m + 1] = q * cum[-1]
        self.pa = pa
        self.pb = pb
        self.split_cum = split_cum


_TABLES_CACHE: dict[tuple[float, float, int], _PcfgTables] = {}


def _pcfg_tables(p: float, q: float, max_pairs: int) -> _PcfgTables:
    key = (p, q, max_pairs)
    tables = _TABLES_CACHE.get(key)
    if tables is None:
        tables = _PcfgTables(p, q, max_pairs)
        _TABLES_CACHE[key] = tables
    return tables


_CLOSE_MARK = -1


def _sample_tokens(tables: _PcfgTables, n_pairs: int, rng: random.Random) -> str:
    """Materialize one derivation conditioned on its total pair count."""
    out: list[str] = []
    stack = [n_pairs]
    searchsorted = np.searchsorted
    rand = rng.random
    while stack:
        n = stack.pop()
        if n == _CLOSE_MARK:
            out.append(")")
            continue
        if n == 0:
            continue
        out.append("(")
        m = n - 1
        if m == 0:
            inner = 0
        else:
            cum = tables.split_cum[m]
            inner = int(searchsorted(cum, rand() * cum[-1], side="right"))
            if inner > m:
                inner = m
        stack.append(m - inner)
        stack.append(_CLOSE_MARK)
        stack.append(inner)
    return "".join(out)


def _window_cum(tables: _PcfgTables, lo_pairs: int, hi_pairs: int) -> np.ndarray:
    cum = np.cumsum(tables.pa[lo_pairs : hi_pairs + 1])
    if not cum[-1] > 0.0:
        raise GenerationStalled(
            f"length window [{2 * lo_pairs}, {2 * hi_pairs}] has no reachable mass"
        )
    return cum


def _sample_pairs(win_cum: np.ndarray, lo_pairs: int, rng: random.Random) -> int:
    idx = int(np.searchsorted(win_cum, rng.random() * win_cum[-1], side="right"))
    if idx >= len(win_cum):
        idx = len(win_cum) - 1
    return lo_pairs + idx


def generate_word(spec: GenSpec, rng: random.Random | None = None) -> DyckWord:
    """Draw one word from the PCFG conditioned on the spec's length window."""
    if rng is None:
        rng = random.Random(spec.seed)
    lo, hi = spec.min_len // 2, spec.max_len // 2
    tables = _pcfg_tables(spec.pcfg_p, spec.pcfg_q, hi)
    win_cum = _window_cum(tables, lo, hi)
    n = _sample_pairs(win_cum, lo, rng)
    return DyckWord.from_text(_sample_tokens(tables, n, rng))


def _catalan(n: int) -> int:
    return math.comb(2 * n, n) // (n + 1)


def _distinct_available(lo_pairs: int, hi_pairs: int, need: int) -> int:
    """Count distinct words in the window, stopping once `need` is reached."""
    total = 0
    for n in range(lo_pairs, hi_pairs + 1):
        total += _catalan(n)
        if total >= need:
            return total
    return total


def generate_split(
    name: SplitName,
    spec: GenSpec,
    exclude: set[str] | frozenset[str] = frozenset(),
    max_rejects: int = MAX_CONSECUTIVE_REJECTS,
) -> DatasetSplit:
    """Collect `spec.count` pairwise-distinct words, none in `exclude`."""
    lo, hi = spec.min_len // 2, spec.max_len // 2
    excluded_in_window = sum(1 for w in exclude if spec.min_len <= len(w) <= spec.max_len)
    need = spec.count + excluded_in_window
    if _distinct_available(lo, hi, need) < need:
        raise GenerationStalled(
            f"window [{spec.min_len}, {spec.max_len}] holds fewer than "
            f"{spec.count} distinct words after exclusions"
        )

    rng = random.Random(spec.seed)
    tables = _pcfg_tables(spec.pcfg_p, spec.pcfg_q, hi)
    win_cum = _window_cum(tables, lo, hi)
    words: list[DyckWord] = []
    seen: set[str] = set()
    rejects = 0
    while len(words) < spec.count:
        text = _sample_tokens(tables, _sample_pairs(win_cum, lo, rng), rng)
        if text in seen or text in exclude:
            rejects += 1
            if rejects >= max_rejects:
                raise GenerationStalled(
                    f"{rejects} consecutive rejected draws for split {name.value}"
                )
            continue
        rejects = 0
        seen.add(text)
        words.append(DyckWord.from_text(text))
    return DatasetSplit(name, words)


def generate_zigzag(spec: ZigzagSpec) -> DyckWord:
    """Deterministic word: total_len/(2j) repetitions of j opens then j closes."""
    period = 2 * spec.j
    if spec.total_len % period != 0:
        raise IndivisibleLength(
            f"total_len {spec.total_len} is not a multiple of 2*j = {period}"
        )
    block = "(" * spec.j + ")" * spec.j
    return DyckWord.from_text(block * (spec.total_len // period))


def make_zigzag_split(js: list[int], total_len: int) -> DatasetSplit:
    words = [generate_zigzag(ZigzagSpec(j, total_len)) for j in js]
    return DatasetSplit(SplitName.ZIGZAG, words)


# --- file format: one word per line, '(' and ')' only, LF endings ---------


def serialize_split(split: DatasetSplit) -> str:
    return "".join(w.text + "\n" for w in split.words)


def deserialize_split(name: SplitName, text: str) -> DatasetSplit:
    words = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        if line == "":
            continue  # trailing newline
        try:
            words.append(DyckWord.from_text(line))
        except (ValueError, NegativeDepth) as exc:
            raise ParseError(lineno, str(exc)) from None
    return DatasetSplit(name, words)


def write_split(split: DatasetSplit, path: Path) -> None:
    from .runio import atomic_write_text

    atomic_write_text(path, serialize_split(split))


def read_split(name: SplitName, path: Path) -> DatasetSplit:
    return deserialize_split(name, Path(path).read_text(encoding="utf-8"))


def split_manifest(split: DatasetSplit, spec: GenSpec, file_name: str) -> dict:
    """Manifest fields for a PCFG-generated split."""
    return {
        "name": split.name.value,
        "count": spec.count,
        "minLen": spec.min_len,
        "maxLen": spec.max_len,
        "pcfgP": spec.pcfg_p,
        "pcfgQ": spec.pcfg_q,
        "seed": spec.seed,
        "file": file_name,
    }
