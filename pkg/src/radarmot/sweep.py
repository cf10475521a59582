"""Experiment grid over {history horizon x association mode x process noise}.

Each cell runs the full simulate/train/track/evaluate pipeline in its own
subdirectory with a seed derived from the master seed and the cell key, so
cells are order-independent and individually reproducible. Failures are
recorded and the sweep keeps going; the consolidated CSV is sorted by cell
key for stable diffs.
"""

from __future__ import annotations

import hashlib
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .config import build_run_config
from .io import write_csv, write_json
from .pipeline import run_evaluate, run_simulate, run_track, run_train
from .plotting import line_chart, write_chart

SWEEP_CSV_COLUMNS = [
    "cell_key", "horizon", "association", "noise_process", "seed",
    "amota", "amotp", "tp", "fp", "fn", "ids",
]


@dataclass(frozen=True)
class SweepCell:
    horizon: int
    association_mode: str
    noise_process: str

    @property
    def key(self) -> str:
        return (f"association={self.association_mode},horizon={self.horizon},"
                f"noise={self.noise_process}")

    @property
    def dirname(self) -> str:
        return self.key.replace("=", "-").replace(",", "_")


def cell_seed(master_seed: int, cell_key: str) -> int:
    """Stable 32-bit seed from the master seed and the cell's identity."""
    digest = hashlib.sha256(f"{master_seed}:{cell_key}".encode("utf-8")).hexdigest()
    return int(digest[:8], 16)


def cell_config(base: dict, cell: SweepCell, master_seed: int, out_dir: Path) -> dict:
    """The merged config a standalone run of this cell would use."""
    cfg = dict(base)
    cfg["seed"] = cell_seed(master_seed, cell.key)
    cfg["out_dir"] = str(Path(out_dir) / "cells" / cell.dirname)
    cfg["association"] = {**base["association"], "mode": cell.association_mode}
    cfg["noise"] = {**base["noise"], "process": cell.noise_process}
    cfg["training"] = {**base["training"], "horizon": cell.horizon}
    return cfg


def _run_cell(payload: tuple[dict, str, int, str, str]) -> dict:
    base, key, horizon, association_mode, noise_process = payload
    cell = SweepCell(horizon=horizon, association_mode=association_mode,
                     noise_process=noise_process)
    try:
        cfg = build_run_config(base)
        run_simulate(cfg)
        if cfg.motion_mode == "predictor":
            run_train(cfg)
        run_track(cfg)
        summary = run_evaluate(cfg)
        return {
            "cell_key": key,
            "horizon": horizon,
            "association": association_mode,
            "noise_process": noise_process,
            "seed": cfg.seed,
            "amota": summary["amota"],
            "amotp": summary["amotp"],
            **summary["best"],
        }
    except Exception as exc:
        return {
            "cell_key": key,
            "error": type(exc).__name__,
            "message": str(exc),
            "trace": traceback.format_exc(limit=5),
        }


def run_sweep(merged: dict, parallelism: int | None = None) -> dict:
    """Run the whole grid; write sweep.csv, failures.json and a summary chart."""
    sweep_cfg = merged["sweep"]
    if parallelism is None:
        parallelism = int(sweep_cfg.get("parallelism", 2))
    out_dir = Path(merged["out_dir"])
    master_seed = int(merged["seed"])

    cells = sorted(
        (
            SweepCell(horizon=int(h), association_mode=a, noise_process=n)
            for h in sweep_cfg["horizons"]
            for a in sweep_cfg["association_modes"]
            for n in sweep_cfg["noise_modes"]
        ),
        key=lambda c: c.key,
    )
    payloads = [
        (cell_config(merged, cell, master_seed, out_dir), cell.key,
         cell.horizon, cell.association_mode, cell.noise_process)
        for cell in cells
    ]
    if parallelism <= 1:
        outcomes = [_run_cell(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(_run_cell, payloads))

    rows = sorted((o for o in outcomes if "error" not in o),
                  key=lambda o: o["cell_key"])
    failures = sorted((o for o in outcomes if "error" in o),
                      key=lambda o: o["cell_key"])

    csv_path = out_dir / "sweep.csv"
    write_csv(csv_path, SWEEP_CSV_COLUMNS,
              ([row[c] for c in SWEEP_CSV_COLUMNS] for row in rows))
    failures_path = out_dir / "failures.json"
    write_json(failures_path, {"failures": failures})

    chart_path = None
    if rows:
        chart_path = out_dir / "amota_by_horizon.svg"
        write_chart(chart_path, _amota_chart(rows))
    return {
        "csv": str(csv_path),
        "failures": str(failures_path),
        "chart": None if chart_path is None else str(chart_path),
        "cells": len(rows),
        "failed": len(failures),
    }


def _amota_chart(rows: list[dict]) -> str:
    series = {}
    for row in rows:
        label = f"{row['association']}/{row['noise_process']}"
        series.setdefault(label, []).append((row["horizon"], row["amota"]))
    packed = []
    for label in sorted(series):
        points = sorted(series[label])
        packed.append((label, [p[0] for p in points], [p[1] for p in points]))
    return line_chart(packed, title="AMOTA by history horizon",
                      x_label="horizon (frames)", y_label="AMOTA")
