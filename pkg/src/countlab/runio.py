"""Atomic file IO, checkpoint JSON, and run-directory layout.

All writes go through a temp-file-plus-rename so an interrupted command
never leaves a truncated artifact behind.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from pathlib import Path


def atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path: Path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=1) + "\n")


def read_json(path: Path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def run_dir(out_dir: Path, kind_name: str, run_id: str) -> Path:
    return Path(out_dir) / "runs" / kind_name.lower() / run_id


def checkpoint_path(rdir: Path, epoch: int) -> Path:
    return Path(rdir) / f"epoch{epoch}.ckpt.json"


def metrics_path(rdir: Path) -> Path:
    return Path(rdir) / "metrics.csv"


def write_metrics(rdir: Path, rows: list[tuple[int, float, float]]) -> None:
    # str(float) is the shortest round-trip repr, so metrics reload exactly
    write_csv(metrics_path(rdir), ["epoch", "trainLoss", "valLoss"], [list(r) for r in rows])


def read_metrics(rdir: Path) -> list[tuple[int, float, float]]:
    path = metrics_path(rdir)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [
            (int(r["epoch"]), float(r["trainLoss"]), float(r["valLoss"])) for r in reader
        ]
