"""Simulator tests: exact kinematics, noise statistics, presets, file I/O."""

import math

import numpy as np
import pytest

from radarmot.fusion import fuse_frame
from radarmot.geometry import KinematicState, radial_velocity
from radarmot.predictor import cv_predict
from radarmot.sim import (
    GroundTruthFrame,
    ObjectSpec,
    PRESET_NAMES,
    ScenarioSpec,
    SegmentSpec,
    SensorNoise,
    export_training_set,
    generate,
    preset,
    read_ground_truth,
    read_sample_sets,
    spec_from_dict,
    spec_to_dict,
    with_seed,
    write_ground_truth,
    write_sample_sets,
)

QUIET = SensorNoise(pose_sigma=(0.0, 0.0, 0.0, 0.0), doppler_sigma=0.0, jitter_sigma=0.0)


def det_equal(a, b):
    return (a.box == b.box and a.doppler == b.doppler and a.confidence == b.confidence
            and np.array_equal(a.box_std, b.box_std))


def sample_sets_equal(sa, sb):
    if len(sa) != len(sb):
        return False
    for ss_a, ss_b in zip(sa, sb):
        if ss_a.frame != ss_b.frame or len(ss_a.samples) != len(ss_b.samples):
            return False
        for pa, pb in zip(ss_a.samples, ss_b.samples):
            if len(pa) != len(pb) or not all(det_equal(x, y) for x, y in zip(pa, pb)):
                return False
    return True


def single_cv_spec(**overrides):
    defaults = dict(
        duration=20,
        objects=(
            ObjectSpec(object_id=0, x=5.0, y=-3.0, yaw=0.4, speed=6.0,
                       segments=(SegmentSpec("cv", 40),)),
        ),
        noise=QUIET,
        clutter_rate=0.0,
        p_detect=1.0,
        n_d=4,
        seed=11,
    )
    defaults.update(overrides)
    return ScenarioSpec(**defaults)


class TestKinematics:
    def test_cv_trajectory_matches_closed_form(self):
        spec = single_cv_spec()
        gt, _ = generate(spec)
        dt = spec.dt
        for frame in (0, 7, 19):
            box = gt[frame].objects[0].box
            assert box.x == pytest.approx(5.0 + 6.0 * math.cos(0.4) * frame * dt, abs=1e-12)
            assert box.y == pytest.approx(-3.0 + 6.0 * math.sin(0.4) * frame * dt, abs=1e-12)
            assert box.yaw == pytest.approx(0.4)

    def test_turn_radius_is_speed_over_omega(self):
        # speed 10 m/s at yaw rate 0.2 rad/s rides a 50 m circle
        yaw0 = 0.3
        spec = ScenarioSpec(
            duration=60,
            objects=(ObjectSpec(object_id=0, x=12.0, y=-4.0, yaw=yaw0, speed=10.0,
                                segments=(SegmentSpec("turn", 80, omega=0.2),)),),
            noise=QUIET, clutter_rate=0.0, p_detect=1.0, n_d=1, seed=0,
        )
        gt, _ = generate(spec)
        radius = 10.0 / 0.2
        center = np.array([12.0 - radius * math.sin(yaw0), -4.0 + radius * math.cos(yaw0)])
        for frame in (10, 25, 45):
            box = gt[frame].objects[0].box
            dist = math.hypot(box.x - center[0], box.y - center[1])
            assert dist == pytest.approx(radius, abs=1e-9)

    def test_turn_heading_advances_at_omega(self):
        spec = ScenarioSpec(
            duration=30,
            objects=(ObjectSpec(object_id=0, x=0.0, y=30.0, yaw=0.0, speed=5.0,
                                segments=(SegmentSpec("turn", 40, omega=0.5),)),),
            noise=QUIET, clutter_rate=0.0, p_detect=1.0, n_d=1, seed=0,
        )
        gt, _ = generate(spec)
        assert gt[20].objects[0].box.yaw == pytest.approx(0.5 * 20 * spec.dt, abs=1e-12)

    def test_stop_segment_freezes_position_with_zero_velocity(self):
        spec = ScenarioSpec(
            duration=30,
            objects=(ObjectSpec(object_id=0, x=1.0, y=2.0, yaw=0.2, speed=8.0,
                                segments=(SegmentSpec("cv", 10), SegmentSpec("stop", 10),
                                          SegmentSpec("cv", 10))),),
            noise=QUIET, clutter_rate=0.0, p_detect=1.0, n_d=1, seed=0,
        )
        gt, _ = generate(spec)
        frozen = gt[10].objects[0].box
        for frame in range(10, 20):
            obj = gt[frame].objects[0]
            assert obj.box.x == frozen.x and obj.box.y == frozen.y
            assert obj.velocity == (0.0, 0.0, 0.0)
        # motion resumes afterwards
        assert gt[21].objects[0].box.x > frozen.x

    def test_object_leaves_scene_when_schedule_ends(self):
        spec = single_cv_spec(
            duration=20,
            objects=(ObjectSpec(object_id=0, x=0.0, y=10.0, yaw=0.0, speed=5.0,
                                segments=(SegmentSpec("cv", 10),)),),
        )
        gt, samples = generate(spec)
        assert all(len(gt[f].objects) == 1 for f in range(10))
        assert all(len(gt[f].objects) == 0 for f in range(10, 20))
        assert all(len(p) == 0 for f in range(10, 20) for p in samples[f].samples)

    def test_gt_velocity_matches_finite_difference(self):
        spec = preset("regime_switch", seed=3)
        spec = ScenarioSpec(**{**spec_to_dict_kwargs(spec), "noise": QUIET,
                               "clutter_rate": 0.0, "p_detect": 1.0, "n_d": 1})
        gt, _ = generate(spec)
        dt = spec.dt
        # instantaneous speed equals the commanded speed on every frame
        for frame in (5, 40, 70, 100, 140):
            for obj in gt[frame].objects:
                speed = math.hypot(obj.velocity[0], obj.velocity[1])
                assert speed > 0
                # chord length over one frame is within 1% of speed * dt
                nxt = next(o for o in gt[frame + 1].objects if o.object_id == obj.object_id)
                chord = math.hypot(nxt.box.x - obj.box.x, nxt.box.y - obj.box.y)
                assert chord == pytest.approx(speed * dt, rel=1e-2)


def spec_to_dict_kwargs(spec):
    data = spec_to_dict(spec)
    rebuilt = spec_from_dict(data)
    return dict(
        duration=rebuilt.duration, objects=rebuilt.objects, frame_rate=rebuilt.frame_rate,
        noise=rebuilt.noise, clutter_rate=rebuilt.clutter_rate, p_detect=rebuilt.p_detect,
        n_d=rebuilt.n_d, seed=rebuilt.seed, sensor_origin=rebuilt.sensor_origin,
        name=rebuilt.name,
    )


class TestNoiseFreeDetections:
    def test_passes_reproduce_ground_truth_exactly(self):
        spec = single_cv_spec()
        gt, samples = generate(spec)
        for frame in range(spec.duration):
            truth = gt[frame].objects[0].box
            assert len(samples[frame].samples) == spec.n_d
            for single_pass in samples[frame].samples:
                assert len(single_pass) == 1
                det = single_pass[0]
                assert det.box.x == truth.x
                assert det.box.y == truth.y
                assert det.box.z == truth.z
                assert det.box.yaw == truth.yaw
                assert (det.box.l, det.box.w, det.box.h) == (truth.l, truth.w, truth.h)

    def test_fused_std_is_zero_without_noise(self):
        spec = single_cv_spec()
        _, samples = generate(spec)
        fused = fuse_frame(samples[5], tau_iou=0.3, min_support=0.5)
        assert len(fused) == 1
        assert np.all(fused[0].box_std == 0.0)

    def test_doppler_equals_true_radial_velocity(self):
        spec = single_cv_spec(
            objects=(ObjectSpec(object_id=0, x=0.0, y=20.0, yaw=math.pi / 2, speed=5.0,
                                segments=(SegmentSpec("cv", 40),)),),
        )
        gt, samples = generate(spec)
        for frame in (0, 6, 15):
            obj = gt[frame].objects[0]
            state = KinematicState(x=obj.box.x, y=obj.box.y, z=obj.box.z, yaw=obj.box.yaw,
                                   vx=obj.velocity[0], vy=obj.velocity[1], vz=obj.velocity[2])
            expected = radial_velocity(state, np.zeros(3))
            assert expected == pytest.approx(5.0, abs=1e-12)
            for single_pass in samples[frame].samples:
                assert single_pass[0].doppler == pytest.approx(expected, abs=1e-12)


class TestStochasticStructure:
    def test_zero_p_detect_leaves_only_clutter(self):
        spec = single_cv_spec(p_detect=0.0, clutter_rate=1.5, seed=2)
        gt, samples = generate(spec)
        total = sum(len(p) for ss in samples for p in ss.samples)
        assert total > 0
        # every detection is far from the lone true object or differently sized
        for ss in samples:
            for single_pass in ss.samples:
                for det in single_pass:
                    truth = gt[ss.frame].objects[0].box
                    same_spot = (abs(det.box.x - truth.x) < 1e-9
                                 and abs(det.box.y - truth.y) < 1e-9)
                    assert not same_spot

    def test_clutter_count_matches_poisson_rate(self):
        lam = 2.0
        spec = ScenarioSpec(duration=500, objects=(), noise=QUIET, clutter_rate=lam,
                            p_detect=1.0, n_d=4, seed=7)
        _, samples = generate(spec)
        counts = [len(p) for ss in samples for p in ss.samples]
        n = len(counts)
        assert n == 2000
        se = math.sqrt(lam / n)
        assert abs(float(np.mean(counts)) - lam) < 3.0 * se

    def test_detection_rate_matches_p_detect(self):
        p = 0.7
        spec = single_cv_spec(duration=400, p_detect=p, n_d=5, seed=13,
                              objects=(ObjectSpec(object_id=0, x=5.0, y=5.0, yaw=0.0,
                                                  speed=0.0,
                                                  segments=(SegmentSpec("cv", 400),)),))
        _, samples = generate(spec)
        hits = sum(len(pass_dets) for ss in samples for pass_dets in ss.samples)
        n = 400 * 5
        se = math.sqrt(p * (1.0 - p) / n)
        assert abs(hits / n - p) < 3.0 * se

    def test_fused_std_monotone_in_pass_jitter(self):
        sigmas = (0.05, 0.1, 0.2, 0.4, 0.8)
        means = []
        for sigma in sigmas:
            spec = single_cv_spec(
                duration=40, n_d=8, seed=21,
                noise=SensorNoise(pose_sigma=(0.0, 0.0, 0.0, 0.0),
                                  doppler_sigma=0.0, jitter_sigma=sigma),
            )
            _, samples = generate(spec)
            stds = []
            for ss in samples:
                fused = fuse_frame(ss, tau_iou=0.1, min_support=0.5)
                if fused:
                    stds.append(fused[0].box_std[0])
            means.append(float(np.mean(stds)))
        assert all(b > a for a, b in zip(means, means[1:]))

    def test_generate_is_deterministic(self):
        spec = preset("regime_switch", seed=9)
        gt_a, samples_a = generate(spec)
        gt_b, samples_b = generate(spec)
        assert gt_a == gt_b
        assert sample_sets_equal(samples_a, samples_b)

    def test_different_seeds_differ(self):
        _, samples_a = generate(single_cv_spec(noise=SensorNoise(), seed=1))
        _, samples_b = generate(single_cv_spec(noise=SensorNoise(), seed=2))
        assert not sample_sets_equal(samples_a, samples_b)


class TestTrainingExport:
    def test_window_count_is_length_minus_horizon(self):
        spec = single_cv_spec(
            duration=50,
            objects=(ObjectSpec(object_id=0, x=5.0, y=-3.0, yaw=0.4, speed=6.0,
                                segments=(SegmentSpec("cv", 60),)),),
        )
        gt, _ = generate(spec)
        samples = export_training_set(gt, horizon=3)
        assert len(samples) == 47
        history, target = samples[0]
        assert len(history) == 3
        assert target.shape == (4,)

    def test_short_trajectories_are_skipped(self):
        spec = ScenarioSpec(
            duration=20,
            objects=(
                ObjectSpec(object_id=0, x=0.0, y=5.0, yaw=0.0, speed=4.0,
                           segments=(SegmentSpec("cv", 4),)),
                ObjectSpec(object_id=1, x=0.0, y=-5.0, yaw=0.0, speed=4.0,
                           segments=(SegmentSpec("cv", 20),)),
            ),
            noise=QUIET, clutter_rate=0.0, p_detect=1.0, n_d=1, seed=0,
        )
        gt, _ = generate(spec)
        # horizon 5 needs >= 6 poses: object 0 (4 poses) contributes nothing
        samples = export_training_set(gt, horizon=5)
        assert len(samples) == 15

    def test_cv_targets_match_cv_extrapolation(self):
        spec = single_cv_spec(duration=30)
        gt, _ = generate(spec)
        dt = spec.dt
        vx, vy = 6.0 * math.cos(0.4), 6.0 * math.sin(0.4)
        for history, target in export_training_set(gt, horizon=4):
            last = history.last_pose
            state = KinematicState(x=last[0], y=last[1], z=last[2], yaw=last[3],
                                   vx=vx, vy=vy, vz=0.0)
            predicted = cv_predict(state, dt)
            np.testing.assert_allclose(
                [predicted.x, predicted.y, predicted.z, predicted.yaw], target, atol=1e-9)

    def test_horizon_below_two_rejected(self):
        gt = [GroundTruthFrame(frame_index=0, objects=())]
        with pytest.raises(ValueError):
            export_training_set(gt, horizon=1)


class TestPresets:
    @pytest.mark.parametrize("name", PRESET_NAMES)
    def test_presets_generate(self, name):
        spec = preset(name, seed=4)
        assert spec.name == name
        assert spec.seed == 4
        gt, samples = generate(spec)
        assert len(gt) == spec.duration
        assert len(samples) == spec.duration

    def test_unknown_preset_rejected(self):
        with pytest.raises(ValueError):
            preset("figure_eight")

    def test_crossing_doppler_geometry(self):
        # at the crossing frame both objects meet near (0, 60) with radial
        # speeds +10 and -10 m/s seen from the origin
        spec = preset("crossing_doppler")
        gt, _ = generate(ScenarioSpec(**{**spec_to_dict_kwargs(spec), "noise": QUIET,
                                         "clutter_rate": 0.0, "p_detect": 1.0, "n_d": 1}))
        frame = gt[50]
        a, b = frame.objects
        assert math.hypot(a.box.x - b.box.x, a.box.y - b.box.y) < 1e-6
        radials = []
        for obj in (a, b):
            state = KinematicState(x=obj.box.x, y=obj.box.y, z=obj.box.z, yaw=obj.box.yaw,
                                   vx=obj.velocity[0], vy=obj.velocity[1], vz=obj.velocity[2])
            radials.append(radial_velocity(state, np.zeros(3)))
        assert sorted(radials) == pytest.approx([-10.0, 10.0], abs=1e-9)

    def test_dense_parallel_lane_spacing(self):
        spec = preset("dense_parallel")
        gt, _ = generate(spec)
        ys = sorted(o.box.y for o in gt[0].objects)
        gaps = [b - a for a, b in zip(ys, ys[1:])]
        assert gaps == pytest.approx([4.0] * 9)

    def test_regime_switch_alternates_heading_rate(self):
        spec = preset("regime_switch")
        gt, _ = generate(spec)
        obj0 = {f: next(o for o in gt[f].objects if o.object_id == 0) for f in range(150)}
        # straight leg: heading constant
        assert obj0[10].box.yaw == pytest.approx(obj0[20].box.yaw, abs=1e-12)
        # turning leg: heading moves
        assert abs(obj0[40].box.yaw - obj0[50].box.yaw) > 0.3


class TestSpecValidation:
    def test_bad_segment_kind(self):
        with pytest.raises(ValueError):
            SegmentSpec("teleport", 10)

    def test_turn_needs_omega(self):
        with pytest.raises(ValueError):
            SegmentSpec("turn", 10)

    def test_duplicate_ids_rejected(self):
        objs = tuple(
            ObjectSpec(object_id=0, x=0.0, y=float(i), yaw=0.0, speed=1.0,
                       segments=(SegmentSpec("cv", 5),))
            for i in range(2)
        )
        with pytest.raises(ValueError):
            ScenarioSpec(duration=5, objects=objs)

    def test_p_detect_range(self):
        with pytest.raises(ValueError):
            single_cv_spec(p_detect=1.5)


class TestSerialization:
    def test_spec_dict_roundtrip(self):
        spec = preset("stopgo", seed=6)
        rebuilt = spec_from_dict(spec_to_dict(spec))
        assert rebuilt == spec

    def test_with_seed_only_changes_seed(self):
        spec = preset("dense_parallel", seed=1)
        other = with_seed(spec, 42)
        assert other.seed == 42
        assert other.objects == spec.objects

    def test_ground_truth_file_roundtrip(self, tmp_path):
        spec = preset("stopgo", seed=5)
        gt, _ = generate(spec)
        path = tmp_path / "gt.jsonl"
        write_ground_truth(path, gt, spec)
        assert read_ground_truth(path) == gt

    def test_sample_sets_file_roundtrip(self, tmp_path):
        spec = single_cv_spec(noise=SensorNoise(), clutter_rate=1.0, p_detect=0.8, seed=3)
        _, samples = generate(spec)
        path = tmp_path / "samples.jsonl"
        write_sample_sets(path, samples, spec)
        loaded = read_sample_sets(path)
        assert sample_sets_equal(loaded, samples)
