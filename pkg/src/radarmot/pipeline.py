"""Pipeline stages behind the command-line tools.

Each stage reads and writes the conventional files in the run's output
directory (see ``RunConfig.path_for``), embeds a manifest with the config
hash and seed in every header, and is deterministic given config + seed.
"""

from __future__ import annotations

from pathlib import Path

from .config import RunConfig
from .io import write_csv
from .metrics import evaluate, write_report_csv, write_report_json
from .plotting import loss_curve_chart, write_chart
from .predictor import load_predictor, save_predictor, train_predictor
from .sim import (
    export_training_set,
    generate,
    read_ground_truth,
    read_sample_sets,
    read_scenario_header,
    write_ground_truth,
    write_sample_sets,
)
from .tracker import read_track_results, track_sequence, write_track_results


def run_simulate(cfg: RunConfig) -> dict:
    """Generate a scenario and write its ground-truth and sample files."""
    spec = cfg.scenario_spec()
    gt_frames, sample_sets = generate(spec)
    gt_path = cfg.path_for("ground_truth")
    samples_path = cfg.path_for("samples")
    write_ground_truth(gt_path, gt_frames, spec)
    write_sample_sets(samples_path, sample_sets, spec)
    return {
        "ground_truth": str(gt_path),
        "samples": str(samples_path),
        "frames": spec.duration,
        "objects": len(spec.objects),
    }


def run_train(cfg: RunConfig) -> dict:
    """Train the motion predictor on ground-truth trajectories."""
    gt_frames = read_ground_truth(cfg.path_for("ground_truth"))
    dataset = export_training_set(gt_frames, cfg.training.horizon)
    result = train_predictor(dataset, cfg.training)

    model_path = cfg.path_for("model")
    save_predictor(result.model, model_path)
    loss_csv = Path(cfg.out_dir) / "loss.csv"
    write_csv(loss_csv, ["epoch", "loss"],
              ([i, float(loss)] for i, loss in enumerate(result.losses)))
    loss_svg = Path(cfg.out_dir) / "loss.svg"
    write_chart(loss_svg, loss_curve_chart([float(v) for v in result.losses]))
    return {
        "model": str(model_path),
        "loss_csv": str(loss_csv),
        "loss_svg": str(loss_svg),
        "samples": len(dataset),
        "initial_loss": float(result.losses[0]),
        "final_loss": float(result.losses[-1]),
    }


def run_track(cfg: RunConfig) -> dict:
    """Track a simulated detection stream and write per-frame results."""
    samples_path = cfg.path_for("samples")
    sample_sets = read_sample_sets(samples_path)
    spec = read_scenario_header(samples_path)
    model = None
    if cfg.motion_mode == "predictor":
        model = load_predictor(cfg.path_for("model"))
    results = track_sequence(sample_sets, cfg.tracker_config(dt=spec.dt), model)
    tracks_path = cfg.path_for("tracks")
    write_track_results(tracks_path, results, seed=cfg.seed,
                        config=cfg.semantic_config())
    return {
        "tracks": str(tracks_path),
        "frames": len(results),
        "stage2_frames": sum(1 for r in results if r.stage2_pairs),
    }


def run_evaluate(cfg: RunConfig) -> dict:
    """Score a tracking run against its ground truth."""
    gt_frames = read_ground_truth(cfg.path_for("ground_truth"))
    results = read_track_results(cfg.path_for("tracks"))
    report = evaluate(gt_frames, results, dist_threshold=cfg.dist_threshold)
    json_path = Path(cfg.out_dir) / "report.json"
    csv_path = Path(cfg.out_dir) / "report.csv"
    write_report_json(json_path, report, seed=cfg.seed,
                      config=cfg.semantic_config())
    write_report_csv(csv_path, report)
    return {
        "report_json": str(json_path),
        "report_csv": str(csv_path),
        "amota": report.amota,
        "amotp": report.amotp,
        "best": {
            "tp": report.best.tp, "fp": report.best.fp,
            "fn": report.best.fn, "ids": report.best.ids,
        },
    }
