"""
Tracking through a Doppler-ambiguous crossing
=============================================

Two targets meet at the same spot at the same time. Position gates cannot
tell them apart at the crossing — but their radial velocities differ by
20 m/s, so the velocity-aware second association stage can. Running the
same detections through both association settings shows what that stage
buys: fewer identity switches and a higher AMOTA.
"""

from pathlib import Path

from radarmot.config import build_run_config, load_config
from radarmot.metrics import evaluate, write_report_csv
from radarmot.sim import generate, preset
from radarmot.tracker import track_sequence

out_dir = Path("demo_out") / "crossing"
out_dir.mkdir(parents=True, exist_ok=True)

# the detector in this scene has a frame-level bias larger than the
# tracker's nominal measurement noise; a filter tuned tightly for straight
# roads will therefore occasionally lose its position gate (and must decide
# whether a velocity-consistent detection just outside it is worth taking)
TRACKER = {
    "association": {"w2": 3.0},
    "noise": {"q0": [0.04, 0.04, 0.04, 0.005, 0.3, 0.3, 0.1]},
    "lifecycle": {"min_hits": 3, "max_age": 2},
}

spec = preset("crossing_doppler", seed=4)
gt, samples = generate(spec)
print(f"{spec.duration} frames, {len(spec.objects)} objects crossing at frame 50\n")

reports = {}
for mode in ("mahalanobis_only", "two_stage"):
    cfg = build_run_config(load_config(overrides={
        **TRACKER, "seed": spec.seed,
        "association": {**TRACKER["association"], "mode": mode},
    }))
    results = track_sequence(samples, cfg.tracker_config(dt=spec.dt))
    report = evaluate(gt, results)
    reports[mode] = report

    rescued = sum(len(r.stage2_pairs) for r in results)
    print(f"association = {mode}")
    print(f"  AMOTA {report.amota:.3f}   AMOTP {report.amotp:.3f} m")
    print(f"  best operating point: TP {report.best.tp}  FP {report.best.fp}  "
          f"FN {report.best.fn}  identity switches {report.best.ids}")
    print(f"  second-stage rescues: {rescued}\n")
    write_report_csv(out_dir / f"report_{mode}.csv", report)

delta = reports["two_stage"].amota - reports["mahalanobis_only"].amota
print(f"two-stage association adds {delta:+.3f} AMOTA on this seed;")
print("when a track misses its position gate, a Doppler-consistent detection")
print("just outside it keeps the identity alive instead of spawning a duplicate")
print(f"per-recall tables written to {out_dir}/")
