"""Experiment configuration: TOML loading, validation, scaling, seed derivation.

One config file describes the whole pipeline (dataset specs, training
campaigns, zigzag analysis, output locations). Every derived seed is a pure
function of the global seed, so rerunning any command with the same config
reproduces its outputs byte for byte.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .cells import CellKind
from .dyck import GenSpec, SplitName
from .errors import ConfigError
from .training import DEFAULT_LR, LossKind, TrainConfig

PCFG_SPLITS = (SplitName.TRAIN, SplitName.VALIDATION, SplitName.LONG, SplitName.VERYLONG)

# offsets for deriving per-split and per-run seeds from the global seed
_SPLIT_SEED_OFFSET = {
    SplitName.TRAIN: 1,
    SplitName.VALIDATION: 2,
    SplitName.LONG: 3,
    SplitName.VERYLONG: 4,
}
_KIND_SEED_BASE = {CellKind.LSTM: 1000, CellKind.GRU: 2000, CellKind.RELU: 3000}

_DEFAULT_SPLIT_SHAPES = {
    SplitName.TRAIN: (10000, 2, 50),
    SplitName.VALIDATION: (5000, 2, 50),
    SplitName.LONG: (5000, 52, 100),
    SplitName.VERYLONG: (100, 1000, 1000),
}
_SCALED_SPLITS = (SplitName.TRAIN, SplitName.VALIDATION, SplitName.LONG)

DEFAULT_ZIGZAG_JS = (10, 20, 25, 50, 100, 125, 200, 250, 500, 1000)


@dataclass(frozen=True)
class CampaignSpec:
    """How many runs to train per kind and how many to keep."""

    runs: int
    select: int

    def __post_init__(self):
        if self.runs < 1 or not (1 <= self.select <= self.runs):
            raise ConfigError("need 1 <= select <= runs")


@dataclass
class ExperimentConfig:
    seed: int
    out_dir: Path
    datasets: dict[SplitName, GenSpec]
    zigzag_js: tuple[int, ...]
    zigzag_total_len: int
    campaigns: dict[CellKind, CampaignSpec]
    epochs: int
    checkpoint_epochs: tuple[int, ...]
    lr: dict[CellKind, float]
    loss: LossKind = LossKind.MSE
    hidden: int = 1
    hist_bin_width: int = 25
    delta_bucket_width: int = 50
    jobs: int = 1

    def validate(self) -> None:
        if not (0 <= self.seed < 2**64):
            raise ConfigError("seed must fit in 64 bits")
        for j in self.zigzag_js:
            if j < 1 or self.zigzag_total_len % (2 * j) != 0:
                raise ConfigError(
                    f"zigzag total_len {self.zigzag_total_len} is not a multiple of 2*j for j={j}"
                )
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not all(e >= 1 for e in self.checkpoint_epochs):
            raise ConfigError("checkpoint epochs must be >= 1")
        if self.hidden < 1:
            raise ConfigError("hidden must be >= 1")
        if self.hist_bin_width < 1 or self.delta_bucket_width < 1:
            raise ConfigError("bin widths must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        for kind, lr in self.lr.items():
            if not lr > 0:
                raise ConfigError(f"{kind.value} learning rate must be positive")

    # -- derived pieces -----------------------------------------------------

    def split_file(self, name: SplitName) -> Path:
        return self.out_dir / "data" / f"{name.value.lower()}.txt"

    def manifest_file(self, name: SplitName) -> Path:
        return self.out_dir / "data" / f"{name.value.lower()}.manifest.json"

    def run_seed(self, kind: CellKind, run_index: int) -> int:
        return self.seed + _KIND_SEED_BASE[kind] + run_index

    def run_id(self, kind: CellKind, run_index: int) -> str:
        return f"{kind.value.lower()}-{run_index:02d}"

    def train_config(self, kind: CellKind, run_index: int) -> TrainConfig:
        return TrainConfig(
            kind=kind,
            lr=self.lr[kind],
            epochs=self.epochs,
            checkpoint_epochs=self.checkpoint_epochs,
            seed=self.run_seed(kind, run_index),
            hidden=self.hidden,
            loss=self.loss,
        )

    def scaled(self, factor: float) -> "ExperimentConfig":
        """Scale TRAIN/VALIDATION/LONG counts; fixed-size splits stay as they are."""
        if not factor > 0:
            raise ConfigError("scale factor must be positive")
        datasets = dict(self.datasets)
        for name in _SCALED_SPLITS:
            spec = datasets[name]
            datasets[name] = replace(spec, count=max(1, round(spec.count * factor)))
        cfg = replace(self, datasets=datasets)
        cfg.validate()
        return cfg


def _default_datasets(seed: int, pcfg_p: float, pcfg_q: float) -> dict[SplitName, GenSpec]:
    out = {}
    for name, (count, lo, hi) in _DEFAULT_SPLIT_SHAPES.items():
        out[name] = GenSpec(
            count, lo, hi, pcfg_p, pcfg_q, seed + _SPLIT_SEED_OFFSET[name]
        )
    return out


def default_config(seed: int = 2026, out_dir: Path | str = "out") -> ExperimentConfig:
    """Full-scale defaults mirroring the documented experiment matrix."""
    return ExperimentConfig(
        seed=seed,
        out_dir=Path(out_dir),
        datasets=_default_datasets(seed, 0.5, 0.25),
        zigzag_js=DEFAULT_ZIGZAG_JS,
        zigzag_total_len=2000,
        campaigns={
            CellKind.LSTM: CampaignSpec(10, 10),
            CellKind.GRU: CampaignSpec(10, 10),
            CellKind.RELU: CampaignSpec(30, 10),
        },
        epochs=30,
        checkpoint_epochs=(1, 5, 10, 15, 20, 25),
        lr=dict(DEFAULT_LR),
    )


def _require(table: dict, key: str, where: str):
    if key not in table:
        raise ConfigError(f"missing key {key!r} in {where}")
    return table[key]


def load_config(
    path: Path | str,
    scale: float | None = None,
    seed_override: int | None = None,
    kinds: tuple[CellKind, ...] | None = None,
    jobs: int | None = None,
) -> ExperimentConfig:
    """Parse a TOML experiment file and apply command-line overrides."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from None

    try:
        seed = int(doc.get("seed", 2026)) if seed_override is None else seed_override
        out_dir = Path(os.environ.get("COUNTLAB_OUT", doc.get("out_dir", "out")))

        pcfg = doc.get("pcfg", {})
        pcfg_p = float(pcfg.get("p", 0.5))
        pcfg_q = float(pcfg.get("q", 0.25))

        datasets = _default_datasets(seed, pcfg_p, pcfg_q)
        for name in PCFG_SPLITS:
            table = doc.get("datasets", {}).get(name.value.lower())
            if table is not None:
                base = datasets[name]
                datasets[name] = GenSpec(
                    int(table.get("count", base.count)),
                    int(table.get("min_len", base.min_len)),
                    int(table.get("max_len", base.max_len)),
                    pcfg_p,
                    pcfg_q,
                    base.seed,
                )

        zz = doc.get("zigzag", {})
        zigzag_js = tuple(int(j) for j in zz.get("js", DEFAULT_ZIGZAG_JS))
        zigzag_total_len = int(zz.get("total_len", 2000))

        tr = doc.get("training", {})
        campaigns = {}
        for kind in CellKind:
            # absent any setting, RELU trains 30 and keeps the 10 best
            if "runs_per_kind" in tr:
                default_runs, default_select = int(tr["runs_per_kind"]), None
            elif kind is CellKind.RELU:
                default_runs, default_select = 30, 10
            else:
                default_runs, default_select = 10, None
            table = tr.get(kind.value.lower(), {})
            runs = int(table.get("runs", default_runs))
            if "select" in table:
                select = int(table["select"])
            elif "runs" in table or default_select is None:
                select = runs
            else:
                select = default_select
            campaigns[kind] = CampaignSpec(runs, select)
        lr = {
            kind: float(tr.get(kind.value.lower(), {}).get("lr", DEFAULT_LR[kind]))
            for kind in CellKind
        }
        epochs = int(tr.get("epochs", 30))
        checkpoint_epochs = tuple(
            int(e) for e in tr.get("checkpoint_epochs", (1, 5, 10, 15, 20, 25))
        )
        loss = LossKind(str(tr.get("loss", "MSE")).upper())

        analysis = doc.get("analysis", {})
        cfg = ExperimentConfig(
            seed=seed,
            out_dir=out_dir,
            datasets=datasets,
            zigzag_js=zigzag_js,
            zigzag_total_len=zigzag_total_len,
            campaigns=campaigns,
            epochs=epochs,
            checkpoint_epochs=checkpoint_epochs,
            lr=lr,
            loss=loss,
            hidden=int(tr.get("hidden", 1)),
            hist_bin_width=int(analysis.get("hist_bin_width", 25)),
            delta_bucket_width=int(analysis.get("delta_bucket_width", 50)),
            jobs=jobs if jobs is not None else int(doc.get("jobs", 1)),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad value in {path}: {exc}") from None

    if kinds is not None:
        cfg.campaigns = {k: v for k, v in cfg.campaigns.items() if k in kinds}
        cfg.lr = {k: v for k, v in cfg.lr.items() if k in kinds}
    if scale is not None:
        cfg = cfg.scaled(scale)
    cfg.validate()
    return cfg
