"""
Training the dropout motion predictor
=====================================

The predictor learns pose deltas from short state histories. A tracker
never sees clean poses — its histories carry estimation noise — so the
network is trained with matching noise injected into its inputs. Under
those conditions it beats constant-velocity extrapolation, which doubles
down on every noisy chord, and its Monte-Carlo spread widens exactly where
its point estimate is least reliable.
"""

from pathlib import Path

import numpy as np

from radarmot.plotting import loss_curve_chart, write_chart
from radarmot.predictor import History, TrainConfig, mc_predict, train_predictor
from radarmot.sim import export_training_set, generate, preset

out_dir = Path("demo_out") / "training"
out_dir.mkdir(parents=True, exist_ok=True)

HISTORY_SIGMA = 0.15  # realistic per-pose estimation noise, meters

# --- fit on the maneuver-heavy preset ------------------------------------
spec = preset("regime_switch", seed=0)
gt, _ = generate(spec)
dataset = export_training_set(gt, horizon=3)
print(f"{len(dataset)} training windows from {len(spec.objects)} trajectories")

config = TrainConfig(horizon=3, epochs=100, learning_rate=0.01, seed=0,
                     history_noise=0.1)
result = train_predictor(dataset, config)
print(f"loss {result.losses[0]:.3f} -> {result.losses[-1]:.3f} "
      f"after {config.epochs} epochs")
write_chart(out_dir / "loss.svg", loss_curve_chart([float(v) for v in result.losses]))

# --- one-step prediction from noisy histories ----------------------------
# both predictors get the same noisy 4-pose window; constant velocity reads
# its velocity from the last chord, the network attends over the window
tracks: dict[int, list] = {}
for frame in gt:
    for o in frame.objects:
        tracks.setdefault(o.object_id, []).append([o.box.x, o.box.y, o.box.z, o.box.yaw])

rng = np.random.default_rng(42)
errors_net, errors_cv, spreads = [], [], []
onset_net, onset_cv = [], []
for oid, pose_list in tracks.items():
    poses = np.array(pose_list)
    for t in range(3, len(poses) - 1):
        noisy = poses[t - 3:t + 1] + rng.normal(0.0, HISTORY_SIGMA, (4, 4))
        truth = poses[t + 1]

        dist = mc_predict(result.model, History(poses=noisy), n_p=10, rng_seed=(oid, t))
        e_net = float(np.hypot(dist.mean[0] - truth[0], dist.mean[1] - truth[1]))
        errors_net.append(e_net)
        spreads.append(float(np.sum(dist.variance[:2])))

        chord = noisy[-1] - noisy[-2]
        e_cv = float(np.hypot(noisy[-1][0] + chord[0] - truth[0],
                              noisy[-1][1] + chord[1] - truth[1]))
        errors_cv.append(e_cv)

        # the five frames after each maneuver switch (every 30 frames)
        if any(s <= t < s + 5 for s in (30, 60, 90, 120)):
            onset_net.append(e_net)
            onset_cv.append(e_cv)

print(f"\none-step displacement error from noisy histories "
      f"(sigma = {HISTORY_SIGMA} m):")
print(f"  chord extrapolation: {np.mean(errors_cv):.3f} m "
      f"(noise in the chord is amplified into the step)")
print(f"  trained predictor:   {np.mean(errors_net):.3f} m")
print(f"  5 frames after each maneuver onset: "
      f"chord {np.mean(onset_cv):.3f} m, predictor {np.mean(onset_net):.3f} m")

# --- uncertainty tracks input quality ------------------------------------
# dropout spread is an epistemic signal: the rougher the history, the more
# the network's dropout ensemble disagrees. Feed windows of varying quality
# and the spread sorts them together with the resulting error.
errors2, spreads2 = [], []
for oid, pose_list in tracks.items():
    poses = np.array(pose_list)
    for t in range(3, len(poses) - 1):
        sigma = rng.uniform(0.0, 0.4)
        noisy = poses[t - 3:t + 1] + rng.normal(0.0, sigma, (4, 4))
        truth = poses[t + 1]
        dist = mc_predict(result.model, History(poses=noisy), n_p=20, rng_seed=(oid, t, 1))
        spreads2.append(float(np.sum(dist.variance[:2])))
        errors2.append(float((dist.mean[0] - truth[0]) ** 2 + (dist.mean[1] - truth[1]) ** 2))

order = np.argsort(spreads2)
halves = np.array_split(np.array(errors2)[order], 2)
print(f"\nwith mixed-quality histories (sigma 0 to 0.4 m):")
print(f"  mean squared error in the low-spread half:  {halves[0].mean():.4f}")
print(f"  mean squared error in the high-spread half: {halves[1].mean():.4f}")
print(f"loss curve written to {out_dir / 'loss.svg'}")
