"""Correctness, first-point-of-failure, saturation, and counter-step profiling.

A token is predicted correct when both thresholded output probabilities agree
with the validity targets; a probability of exactly 0.5 counts as predicting
"valid". A sequence is recognized only if every token is correct, and the
first point of failure (FPF) is the earliest 1-based position where the
prediction disagrees. Sequences with no failure are censored and contribute
their full length to mean FPF.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cells import CellKind, ForwardTrace, ParamSet, forward
from .dyck import DatasetSplit, DyckWord, Token, next_targets
from .training import LossKind, _loss_from_probs


@dataclass(frozen=True)
class FpfRecord:
    sequence_id: int
    length: int
    fpf: int | None  # 1-based position, None when censored
    censored: bool

    def __post_init__(self):
        if (self.fpf is None) != self.censored:
            raise ValueError("fpf is None exactly when censored")
        if self.fpf is not None and not (1 <= self.fpf <= self.length):
            raise ValueError(f"fpf {self.fpf} outside [1, {self.length}]")

    @property
    def effective_fpf(self) -> int:
        """FPF with censored sequences counted at their full length."""
        return self.length if self.censored else self.fpf


@dataclass
class EvalReport:
    split_name: str
    mean_loss: float
    sequence_accuracy: float  # percent of sequences with all tokens correct
    n_sequences: int


def token_correct(y_t, target_t) -> bool:
    """Thresholded prediction agrees on both outputs; y >= 0.5 predicts valid."""
    return bool(
        (y_t[0] >= 0.5) == (target_t[0] >= 0.5) and (y_t[1] >= 0.5) == (target_t[1] >= 0.5)
    )


def _correct_mask(trace: ForwardTrace, tgt: np.ndarray) -> np.ndarray:
    return ((trace.probs >= 0.5) == (tgt >= 0.5)).all(axis=1)


def _first_failure(mask: np.ndarray) -> int | None:
    bad = np.flatnonzero(~mask)
    return int(bad[0]) + 1 if bad.size else None


def fpf(params: ParamSet, word: DyckWord, sequence_id: int = 0) -> FpfRecord:
    """First 1-based position whose prediction is wrong, or a censored record."""
    trace = forward(params, word.tokens)
    first = _first_failure(_correct_mask(trace, next_targets(word).arr))
    return FpfRecord(sequence_id, len(word), first, first is None)


def evaluate_split(
    params: ParamSet, split: DatasetSplit, loss: LossKind = LossKind.MSE
) -> EvalReport:
    """Sequence-level accuracy and mean per-sequence loss over one split."""
    report, _ = evaluate_split_with_fpf(params, split, loss)
    return report


def evaluate_split_with_fpf(
    params: ParamSet, split: DatasetSplit, loss: LossKind = LossKind.MSE
) -> tuple[EvalReport, list[FpfRecord]]:
    records = []
    total_loss = 0.0
    for seq_id, word in enumerate(split.words):
        trace = forward(params, word.tokens)
        tgt = next_targets(word).arr
        total_loss += _loss_from_probs(trace.probs, tgt, loss)
        first = _first_failure(_correct_mask(trace, tgt))
        records.append(FpfRecord(seq_id, len(word), first, first is None))
    n = len(split.words)
    accuracy = 100.0 * sum(r.censored for r in records) / n
    return EvalReport(split.name.value, total_loss / n, accuracy, n), records


def summarize_accuracy(reports: list[EvalReport]) -> tuple[float, float, float]:
    """Cross-model (mean, min, max) of sequence accuracy."""
    accs = [r.sequence_accuracy for r in reports]
    return float(np.mean(accs)), min(accs), max(accs)


@dataclass
class FpfAggregate:
    per_model_means: list[float]
    none_flags: list[bool]  # model never failed on any word
    mean: float
    min: float
    max: float

    @property
    def any_none(self) -> bool:
        return any(self.none_flags)


def fpf_aggregate(records_per_model: list[list[FpfRecord]]) -> FpfAggregate:
    """Mean/min/max over per-model mean FPF, censored counted at full length."""
    if not records_per_model:
        raise ValueError("need at least one model")
    n_words = len(records_per_model[0])
    if any(len(recs) != n_words for recs in records_per_model):
        raise ValueError("models were evaluated on different word sets")
    means = [float(np.mean([r.effective_fpf for r in recs])) for recs in records_per_model]
    flags = [all(r.censored for r in recs) for recs in records_per_model]
    return FpfAggregate(means, flags, float(np.mean(means)), min(means), max(means))


def mean_fpf(params: ParamSet, split: DatasetSplit) -> float:
    """Per-model mean FPF over a split, censored counted at word length."""
    records = [fpf(params, w, i) for i, w in enumerate(split.words)]
    return float(np.mean([r.effective_fpf for r in records]))


def counter_trace(trace: ForwardTrace) -> np.ndarray:
    """The counting variable series: cell value for LSTM, state otherwise."""
    series = trace.c if trace.kind is CellKind.LSTM else trace.h
    return series[:, 0] if trace.hidden == 1 else series


# --- saturation --------------------------------------------------------------

_SIGMOID_GATES = {"i", "f", "o", "z", "r"}


@dataclass
class GateStats:
    min: float
    mean: float
    max: float
    frac_saturated: float


@dataclass
class SaturationReport:
    kind: CellKind
    delta: float
    gates: dict[str, GateStats] = field(default_factory=dict)


def saturation_report(
    params: ParamSet, probe: DatasetSplit, delta: float = 1e-2
) -> SaturationReport:
    """Gate activation statistics over every timestep of every probe sequence.

    Sigmoid gates count as saturated above 1 - delta; tanh candidates when
    their magnitude exceeds 1 - delta. A ReLU cell has no squashing gates, so
    its report is empty.
    """
    if not (0.0 < delta < 0.5):
        raise ValueError("delta must lie in (0, 0.5)")
    report = SaturationReport(params.kind, delta)
    if params.kind is CellKind.RELU:
        return report
    pooled: dict[str, list[np.ndarray]] = {}
    for word in probe.words:
        trace = forward(params, word.tokens)
        for name, arr in trace.gates.items():
            pooled.setdefault(name, []).append(arr.ravel())
    for name, chunks in pooled.items():
        acts = np.concatenate(chunks)
        level = acts if name in _SIGMOID_GATES else np.abs(acts)
        report.gates[name] = GateStats(
            float(acts.min()),
            float(acts.mean()),
            float(acts.max()),
            float(np.mean(level > 1.0 - delta)),
        )
    return report


# --- increment / decrement profiling ----------------------------------------


@dataclass
class DeltaStats:
    count: int
    mean: float
    std: float


@dataclass
class DeltaProfile:
    bucket_width: int
    entries: dict[tuple[Token, int], DeltaStats] = field(default_factory=dict)

    @property
    def total_count(self) -> int:
        return sum(s.count for s in self.entries.values())


def delta_profile(params: ParamSet, word: DyckWord, bucket_width: int = 50) -> DeltaProfile:
    """Counter steps grouped by (token, depth bucket before the token).

    The step at position t (t >= 2, 1-based) is counter_t - counter_{t-1};
    its bucket is floor(depth_before_t / bucket_width).
    """
    if bucket_width < 1:
        raise ValueError("bucket_width must be >= 1")
    if params.hidden != 1:
        raise ValueError("delta profiling is defined for single-unit cells")
    series = counter_trace(forward(params, word.tokens))
    groups: dict[tuple[Token, int], list[float]] = {}
    for t in range(1, len(word)):
        key = (word.tokens[t], word.depths[t - 1] // bucket_width)
        groups.setdefault(key, []).append(float(series[t] - series[t - 1]))
    profile = DeltaProfile(bucket_width)
    for key, deltas in groups.items():
        arr = np.asarray(deltas)
        profile.entries[key] = DeltaStats(len(deltas), float(arr.mean()), float(arr.std()))
    return profile
