"""
Rotated-box geometry and Monte-Carlo detection fusion
=====================================================

Two boxes overlap in the ground plane; their rotated IoU drives both the
detection-fusion clustering and the tracker's spatial reasoning. A set of
dropout passes over the same scene is then fused into one detection per
object, with sample spread reported as a per-parameter standard deviation.
"""

import numpy as np

from radarmot.geometry import Box3D, Detection, KinematicState, bev_iou, radial_velocity
from radarmot.fusion import SampleSet, fuse_frame

# --- rotated IoU ----------------------------------------------------------
# a 4 m x 2 m car and the same car shifted half a length forward and yawed
a = Box3D(x=0.0, y=0.0, z=0.0, l=4.0, w=2.0, h=1.6, yaw=0.0)
b = Box3D(x=2.0, y=0.3, z=0.0, l=4.0, w=2.0, h=1.6, yaw=0.3)
print(f"IoU(a, b)      = {bev_iou(a, b):.4f}")
print(f"IoU(b, a)      = {bev_iou(b, a):.4f}   (symmetric)")
print(f"IoU(a, a)      = {bev_iou(a, a):.4f}   (self)")

# --- radial velocity ------------------------------------------------------
# a target moving tangentially has zero Doppler; moving along the line of
# sight it shows the full speed
sensor = np.zeros(3)
toward = KinematicState(x=0.0, y=50.0, z=0.0, yaw=-np.pi / 2, vx=0.0, vy=-12.0, vz=0.0)
across = KinematicState(x=0.0, y=50.0, z=0.0, yaw=0.0, vx=12.0, vy=0.0, vz=0.0)
print(f"\nradial velocity, inbound target : {radial_velocity(toward, sensor):+.2f} m/s")
print(f"radial velocity, crossing target: {radial_velocity(across, sensor):+.2f} m/s")

# --- fusing dropout passes ------------------------------------------------
# ten noisy passes over two well-separated objects, one pass missing the
# second object entirely
rng = np.random.default_rng(7)
truths = [Box3D(0.0, 0.0, 0.0, 4.0, 2.0, 1.6, 0.0),
          Box3D(30.0, 5.0, 0.0, 4.0, 2.0, 1.6, 1.2)]
passes = []
for k in range(10):
    one_pass = []
    for i, truth in enumerate(truths):
        if k == 3 and i == 1:
            continue  # simulated dropout miss
        jitter = rng.normal(0.0, 0.15, 3)
        box = Box3D(truth.x + jitter[0], truth.y + jitter[1], truth.z + jitter[2],
                    truth.l, truth.w, truth.h, truth.yaw)
        one_pass.append(Detection(box=box, doppler=rng.normal(-8.0, 0.5),
                                  confidence=float(np.clip(rng.normal(0.8, 0.05), 0, 1))))
    passes.append(one_pass)

fused = fuse_frame(SampleSet(samples=passes, frame=0))
print(f"\nfused {sum(len(p) for p in passes)} raw detections from 10 passes "
      f"into {len(fused)} objects:")
for det in fused:
    xy_std = det.box_std[:2]
    print(f"  center ({det.box.x:6.2f}, {det.box.y:6.2f})  "
          f"confidence {det.confidence:.3f}  xy spread ({xy_std[0]:.3f}, {xy_std[1]:.3f})")
print("the object missed by one pass keeps a lower fused confidence: "
      "support scales the mean score")
