"""Command-line pipeline: generate, train, eval, zigzag, regress, gradcheck.

Every command is a deterministic function of (config file, data directory,
seed): rerunning with identical inputs rewrites byte-identical outputs.
Exit codes: 0 success, 2 config error, 3 data error, 4 gradcheck failure.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import runio
from .analysis import HistogramSpec, fpf_histogram, neg_log_loss, ols
from .cells import CellKind, CounterSpec, ParamSet, make_relu_counter
from .config import PCFG_SPLITS, ExperimentConfig, load_config
from .dyck import (
    DatasetSplit,
    SplitName,
    generate_split,
    make_zigzag_split,
    read_split,
    split_manifest,
    write_split,
)
from .errors import ConfigError, CountlabError, DataError, InsufficientData
from .evaluation import (
    delta_profile,
    evaluate_split_with_fpf,
    fpf,
    fpf_aggregate,
    mean_fpf,
    saturation_report,
    summarize_accuracy,
)
from .training import (
    EpochMetrics,
    RunRecord,
    gradcheck_suite,
    load_checkpoint,
    select_best_runs,
    train_run,
)

ACCURACY_SPLITS = (SplitName.TRAIN, SplitName.VALIDATION, SplitName.LONG)
GRADCHECK_TOLERANCE = 1e-4


# --- generate ----------------------------------------------------------------


def cmd_generate(config: ExperimentConfig) -> list[Path]:
    """Write all dataset files and their manifests; returns the file paths."""
    written: list[Path] = []
    exclude: set[str] = set()
    for name in PCFG_SPLITS:
        spec = config.datasets[name]
        split = generate_split(name, spec, exclude=frozenset(exclude))
        if name in (SplitName.TRAIN, SplitName.VALIDATION):
            exclude |= split.texts()
        path = config.split_file(name)
        write_split(split, path)
        runio.atomic_write_json(
            config.manifest_file(name), split_manifest(split, spec, path.name)
        )
        written.append(path)
        print(f"wrote {path} ({len(split)} words)")
    zz = make_zigzag_split(list(config.zigzag_js), config.zigzag_total_len)
    zz_path = config.split_file(SplitName.ZIGZAG)
    write_split(zz, zz_path)
    runio.atomic_write_json(
        config.manifest_file(SplitName.ZIGZAG),
        {
            "name": SplitName.ZIGZAG.value,
            "count": len(zz),
            "js": list(config.zigzag_js),
            "totalLen": config.zigzag_total_len,
            "file": zz_path.name,
        },
    )
    written.append(zz_path)
    print(f"wrote {zz_path} ({len(zz)} words)")
    return written


def _load_split(config: ExperimentConfig, name: SplitName) -> DatasetSplit:
    path = config.split_file(name)
    if not path.exists():
        raise DataError(f"missing dataset file {path}; run `countlab generate` first")
    return read_split(name, path)


# --- train -------------------------------------------------------------------


def _train_one(args) -> RunRecord:
    train_cfg, train_path, val_path, out_dir, run_id = args
    train = read_split(SplitName.TRAIN, train_path)
    val = read_split(SplitName.VALIDATION, val_path)
    return train_run(train_cfg, train, val, out_dir, run_id, resume=True)


def _campaign_path(config: ExperimentConfig, kind: CellKind) -> Path:
    return config.out_dir / "runs" / kind.value.lower() / "campaign.json"


def _record_to_doc(rec: RunRecord) -> dict:
    return {
        "runId": rec.run_id,
        "kind": rec.kind.value,
        "seed": rec.seed,
        "failed": rec.failed,
        "failure": rec.failure,
        "epochs": [
            {
                "epoch": em.epoch,
                "trainLoss": em.train_loss,
                "valLoss": em.val_loss,
                "checkpoint": str(em.checkpoint) if em.checkpoint else None,
            }
            for em in rec.epochs
        ],
    }


def _record_from_doc(doc: dict) -> RunRecord:
    rec = RunRecord(doc["runId"], CellKind(doc["kind"]), doc["seed"])
    rec.failed = doc["failed"]
    rec.failure = doc.get("failure")
    for em in doc["epochs"]:
        rec.epochs.append(
            EpochMetrics(
                em["epoch"],
                em["trainLoss"],
                em["valLoss"],
                Path(em["checkpoint"]) if em["checkpoint"] else None,
            )
        )
    return rec


def load_campaign(config: ExperimentConfig, kind: CellKind) -> tuple[list[RunRecord], list[str]]:
    """Stored run records and the ids of the selected (best) runs."""
    path = _campaign_path(config, kind)
    if not path.exists():
        raise DataError(f"no campaign at {path}; run `countlab train` first")
    doc = runio.read_json(path)
    return [_record_from_doc(d) for d in doc["runs"]], list(doc["selected"])


def cmd_train(config: ExperimentConfig) -> dict[CellKind, list[RunRecord]]:
    """Train every campaign; resume partial runs; print a best-run summary."""
    train_path = config.split_file(SplitName.TRAIN)
    val_path = config.split_file(SplitName.VALIDATION)
    for p in (train_path, val_path):
        if not p.exists():
            raise DataError(f"missing dataset file {p}; run `countlab generate` first")

    all_records: dict[CellKind, list[RunRecord]] = {}
    for kind, campaign in config.campaigns.items():
        tasks = [
            (
                config.train_config(kind, i),
                train_path,
                val_path,
                config.out_dir,
                config.run_id(kind, i),
            )
            for i in range(campaign.runs)
        ]
        if config.jobs > 1:
            with ProcessPoolExecutor(max_workers=config.jobs) as pool:
                records = list(pool.map(_train_one, tasks))
        else:
            records = [_train_one(t) for t in tasks]

        selected = select_best_runs(records, min(campaign.select, sum(not r.failed for r in records)))
        runio.atomic_write_json(
            _campaign_path(config, kind),
            {
                "kind": kind.value,
                "runs": [_record_to_doc(r) for r in records],
                "selected": [r.run_id for r in selected],
            },
        )
        all_records[kind] = records

        print(f"\n{kind.value}: {len(records)} runs, {len(selected)} selected")
        for rec in selected:
            print(
                f"  {rec.run_id}  bestEpoch={rec.best_epoch}"
                f"  valLoss={rec.best_val_loss:.6f}"
            )
        for rec in records:
            if rec.failed:
                print(f"  {rec.run_id}  FAILED ({rec.failure})")
    return all_records


def _selected_records(config: ExperimentConfig, kind: CellKind) -> list[RunRecord]:
    records, selected_ids = load_campaign(config, kind)
    by_id = {r.run_id: r for r in records}
    return [by_id[rid] for rid in selected_ids]


def _best_params(rec: RunRecord) -> tuple[ParamSet, int]:
    ckpt = rec.best_checkpoint
    if ckpt is None or not Path(ckpt).exists():
        raise DataError(f"missing checkpoint for run {rec.run_id}: expected {ckpt}")
    params, doc = load_checkpoint(ckpt)
    return params, doc["epoch"]


# --- eval ---------------------------------------------------------------------


def _oracle_model() -> tuple[str, str, int, ParamSet]:
    return ("oracle-relu", "RELU", 0, make_relu_counter(CounterSpec(m=1.0)))


def cmd_eval(config: ExperimentConfig, oracle: bool = False) -> Path:
    """Evaluate best checkpoints (or the exact counter) on every split."""
    splits = {name: _load_split(config, name) for name in ACCURACY_SPLITS}
    verylong = _load_split(config, SplitName.VERYLONG)

    if oracle:
        models = {"RELU-oracle": [_oracle_model()]}
    else:
        models = {}
        for kind in config.campaigns:
            models[kind.value] = []
            for rec in _selected_records(config, kind):
                params, epoch = _best_params(rec)
                models[kind.value].append((rec.run_id, kind.value, epoch, params))

    eval_rows: list[list] = []
    fpf_rows: list[list] = []
    sat_rows: list[list] = []
    print(f"\n{'model':12s} {'Training':>18s} {'Validation':>18s} {'Long':>18s} {'VeryLong FPF':>24s}")
    for label, group in models.items():
        acc_reports = {name: [] for name in ACCURACY_SPLITS}
        fpf_records_per_model = []
        for run_id, kind_name, epoch, params in group:
            sat = saturation_report(params, splits[SplitName.VALIDATION])
            for gate, stats in sorted(sat.gates.items()):
                sat_rows.append(
                    [run_id, gate, stats.min, stats.mean, stats.max, stats.frac_saturated]
                )
            for name, split in splits.items():
                report, _ = evaluate_split_with_fpf(params, split, config.loss)
                acc_reports[name].append(report)
                eval_rows.append(
                    [run_id, kind_name, epoch, name.value, report.mean_loss,
                     report.sequence_accuracy]
                )
            vl_report, vl_records = evaluate_split_with_fpf(params, verylong, config.loss)
            eval_rows.append(
                [run_id, kind_name, epoch, SplitName.VERYLONG.value, vl_report.mean_loss,
                 vl_report.sequence_accuracy]
            )
            fpf_records_per_model.append(vl_records)
            for r in vl_records:
                fpf_rows.append(
                    [run_id, kind_name, epoch, r.sequence_id, r.length,
                     "none" if r.censored else r.fpf, int(r.censored)]
                )
        agg = fpf_aggregate(fpf_records_per_model)
        cells = []
        for name in ACCURACY_SPLITS:
            mean, lo, hi = summarize_accuracy(acc_reports[name])
            cells.append(f"{mean:5.1f} ({lo:.1f}/{hi:.1f})")
        fpf_max = "none" if agg.any_none else f"{agg.max:.1f}"
        cells.append(f"{agg.mean:7.1f} ({agg.min:.1f}/{fpf_max})")
        print(f"{label:12s} " + " ".join(f"{c:>18s}" for c in cells))

    out = config.out_dir / "reports"
    runio.write_csv(
        out / "eval.csv",
        ["runId", "kind", "epoch", "split", "meanLoss", "seqAccuracy"],
        eval_rows,
    )
    runio.write_csv(
        out / "fpf.csv",
        ["runId", "kind", "epoch", "sequenceId", "length", "fpf", "censored"],
        fpf_rows,
    )
    runio.write_csv(
        out / "saturation.csv",
        ["runId", "gate", "min", "mean", "max", "fracSaturated"],
        sat_rows,
    )
    print(f"\nwrote {out / 'eval.csv'}, {out / 'fpf.csv'}, {out / 'saturation.csv'}")
    return out


# --- zigzag -------------------------------------------------------------------


def _pooled_checkpoints(config: ExperimentConfig, kind: CellKind) -> list[tuple[str, int, Path]]:
    """(run_id, epoch, path) for every checkpoint epoch of every selected run."""
    out = []
    for rec in _selected_records(config, kind):
        for em in rec.epochs:
            if em.checkpoint is not None and em.epoch in config.checkpoint_epochs:
                out.append((rec.run_id, em.epoch, em.checkpoint))
    return out


def _delta_j(config: ExperimentConfig) -> int:
    return 500 if 500 in config.zigzag_js else max(config.zigzag_js)


def cmd_zigzag(config: ExperimentConfig, oracle: bool = False) -> Path:
    """FPF per (checkpoint, zigzag word), histograms, and counter-step profiles."""
    zz_words = {j: w for j, w in zip(config.zigzag_js,
                                     make_zigzag_split(list(config.zigzag_js),
                                                       config.zigzag_total_len).words)}
    bw = config.hist_bin_width
    hi = ((config.zigzag_total_len + 1 + bw - 1) // bw) * bw
    spec = HistogramSpec(bw, 0, hi)

    fpf_rows: list[list] = []
    hist_rows: list[list] = []
    delta_rows: list[list] = []

    if oracle:
        groups: dict[str, list[tuple[str, int, ParamSet]]] = {
            "RELU-oracle": [("oracle-relu", 0, make_relu_counter(CounterSpec(m=1.0)))]
        }
    else:
        groups = {}
        for kind in config.campaigns:
            groups[kind.value] = [
                (run_id, epoch, load_checkpoint(path)[0])
                for run_id, epoch, path in _pooled_checkpoints(config, kind)
            ]

    for label, group in groups.items():
        for j, word in zz_words.items():
            records = []
            for run_id, epoch, params in group:
                rec = fpf(params, word, sequence_id=j)
                records.append(rec)
                fpf_rows.append(
                    [run_id, label, epoch, j, rec.length,
                     "none" if rec.censored else rec.fpf, int(rec.censored)]
                )
            hist = fpf_histogram(records, spec)
            for start, count in hist.bins:
                hist_rows.append(
                    [label, j, start, min(start + bw, hi), count, hist.censored_count]
                )
        # counter-step profile of the best model on the detail word
        run_id, epoch, params = group[0]
        profile = delta_profile(params, zz_words[_delta_j(config)], config.delta_bucket_width)
        for (token, bucket), stats in sorted(profile.entries.items()):
            delta_rows.append(
                [run_id, token.char, bucket, stats.count, stats.mean, stats.std]
            )

    out = config.out_dir / "reports"
    runio.write_csv(
        out / "histogram.csv",
        ["kind", "j", "binStart", "binEnd", "count", "censoredCount"],
        hist_rows,
    )
    runio.write_csv(
        out / "deltas.csv",
        ["runId", "token", "bucket", "count", "meanDelta", "stdDelta"],
        delta_rows,
    )
    runio.write_csv(
        out / "zigzag_fpf.csv",
        ["runId", "kind", "epoch", "j", "length", "fpf", "censored"],
        fpf_rows,
    )
    print(f"wrote {out / 'histogram.csv'}, {out / 'deltas.csv'}, {out / 'zigzag_fpf.csv'}")
    return out


# --- regress ------------------------------------------------------------------


def _eval_run_checkpoints(args):
    """Losses on the three accuracy splits plus mean very-long FPF, per checkpoint."""
    ckpts, split_paths, verylong_path, loss_kind = args
    splits = {name: read_split(name, path) for name, path in split_paths.items()}
    verylong = read_split(SplitName.VERYLONG, verylong_path)
    rows = []
    for run_id, epoch, path in ckpts:
        params, _ = load_checkpoint(path)
        losses = {}
        for name, split in splits.items():
            report, _ = evaluate_split_with_fpf(params, split, loss_kind)
            losses[name] = report.mean_loss
        rows.append((run_id, epoch, losses, mean_fpf(params, verylong)))
    return rows


def cmd_regress(config: ExperimentConfig) -> Path:
    """Regress -log(split loss) against mean very-long FPF over pooled checkpoints."""
    split_paths = {}
    for name in ACCURACY_SPLITS + (SplitName.VERYLONG,):
        path = config.split_file(name)
        if not path.exists():
            raise DataError(f"missing dataset file {path}; run `countlab generate` first")
        if name is not SplitName.VERYLONG:
            split_paths[name] = path
    verylong_path = config.split_file(SplitName.VERYLONG)

    scatter_rows: list[list] = []
    regress_rows: list[list] = []
    for kind in config.campaigns:
        ckpts = _pooled_checkpoints(config, kind)
        if config.jobs > 1 and len(ckpts) > 1:
            by_run: dict[str, list] = {}
            for c in ckpts:
                by_run.setdefault(c[0], []).append(c)
            tasks = [
                (group, split_paths, verylong_path, config.loss)
                for group in by_run.values()
            ]
            with ProcessPoolExecutor(max_workers=config.jobs) as pool:
                results = [row for chunk in pool.map(_eval_run_checkpoints, tasks) for row in chunk]
        else:
            results = _eval_run_checkpoints((ckpts, split_paths, verylong_path, config.loss))
        results.sort(key=lambda r: (r[0], r[1]))

        points: dict[SplitName, tuple[list[float], list[float]]] = {
            name: ([], []) for name in ACCURACY_SPLITS
        }
        for run_id, epoch, losses, fpf_mean in results:
            for name in ACCURACY_SPLITS:
                if losses[name] > 0.0:  # zero loss has no log; skip as unusable
                    points[name][0].append(neg_log_loss(losses[name]))
                    points[name][1].append(fpf_mean)
            scatter_rows.append(
                [kind.value, run_id, epoch,
                 neg_log_loss(losses[SplitName.VALIDATION])
                 if losses[SplitName.VALIDATION] > 0 else "",
                 fpf_mean]
            )
        for name in ACCURACY_SPLITS:
            xs, ys = points[name]
            if len(xs) < 3:
                raise InsufficientData(
                    f"{kind.value}/{name.value}: only {len(xs)} usable checkpoints, need >= 3"
                )
            result = ols(xs, ys)
            regress_rows.append(
                [kind.value, name.value, result.n, result.slope, result.intercept,
                 result.r2, result.p]
            )
            print(
                f"{kind.value:5s} {name.value:11s} n={result.n:3d} "
                f"slope={result.slope:8.2f} r2={result.r2:.3f} p={result.p:.3e}"
            )

    out = config.out_dir / "reports"
    runio.write_csv(
        out / "regress.csv",
        ["kind", "splitUsedForLoss", "n", "slope", "intercept", "r2", "p"],
        regress_rows,
    )
    runio.write_csv(
        out / "scatter.csv",
        ["kind", "runId", "epoch", "negLogLoss", "meanFpf"],
        scatter_rows,
    )
    print(f"wrote {out / 'regress.csv'} and {out / 'scatter.csv'}")
    return out


# --- gradcheck ------------------------------------------------------------------


def cmd_gradcheck() -> bool:
    """Finite-difference suite over random instances; True when all pass."""
    results = gradcheck_suite(n_instances=20, hiddens=(1, 2))
    ok = True
    for kind, err in results.items():
        passed = err <= GRADCHECK_TOLERANCE
        ok = ok and passed
        print(f"{kind.value:5s} max relative error {err:.3e}  "
              f"{'PASS' if passed else 'FAIL'} (tolerance {GRADCHECK_TOLERANCE:.0e})")
    return ok


# --- entry point -----------------------------------------------------------------


def _parse_kinds(text: str) -> tuple[CellKind, ...]:
    try:
        return tuple(CellKind(part.strip().upper()) for part in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"unknown cell kind in --kinds: {exc}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="countlab",
        description="Counting-generalization experiments for single-cell RNNs "
        "on balanced-bracket sequences.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_config in (
        ("generate", True),
        ("train", True),
        ("eval", True),
        ("zigzag", True),
        ("regress", True),
        ("gradcheck", False),
    ):
        p = sub.add_parser(name)
        if needs_config:
            p.add_argument("--config", required=True, type=Path)
            p.add_argument("--scale", type=float, default=None,
                           help="multiply train/validation/long counts")
            p.add_argument("--kinds", type=str, default=None,
                           help="comma-separated subset of lstm,gru,relu")
            p.add_argument("--jobs", type=int, default=None)
            p.add_argument("--seed", type=int, default=None)
        if name in ("eval", "zigzag"):
            p.add_argument("--oracle", action="store_true",
                           help="evaluate the exact counter instead of checkpoints")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gradcheck":
            return 0 if cmd_gradcheck() else 4
        config = load_config(
            args.config,
            scale=args.scale,
            seed_override=args.seed,
            kinds=_parse_kinds(args.kinds) if args.kinds else None,
            jobs=args.jobs,
        )
        if args.command == "generate":
            cmd_generate(config)
        elif args.command == "train":
            cmd_train(config)
        elif args.command == "eval":
            cmd_eval(config, oracle=args.oracle)
        elif args.command == "zigzag":
            cmd_zigzag(config, oracle=args.oracle)
        elif args.command == "regress":
            cmd_regress(config)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CountlabError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
