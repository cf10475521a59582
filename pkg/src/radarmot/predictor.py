"""Motion prediction for tracked objects.

Two predictors share one interface (pose in, pose out):

* ``cv_predict`` — deterministic constant-velocity extrapolation.
* a small self-attention network over the last ``horizon`` poses, trained
  with an uncertainty-weighted regression loss and sampled at inference
  time with Monte-Carlo dropout to get a predictive mean and variance.

The network is deliberately tiny (single head, d_model=32) and is
implemented directly in numpy with hand-derived gradients so that the
backward pass can be checked against finite differences.

Inputs are featurized as pose deltas relative to the newest pose, which
makes the network exactly equivariant to translations of the scene; the
absolute pose is restored by adding the predicted delta back onto the
newest pose. Yaw columns are unwrapped before differencing so a crossing
of the ±pi seam does not produce a spurious 2*pi jump.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .fusion import attenuated_loss, attenuated_loss_grad
from .geometry import KinematicState, wrap_residual, yaw_normalize
from .io import SchemaError, read_json, write_json

# Parameters are always created, updated and serialized in this order so
# that seeded initialization and on-disk layout are reproducible.
PARAM_ORDER = (
    "We", "be", "Pos",
    "Wq", "bq", "Wk", "bk", "Wv", "bv", "Wo", "bo",
    "W1", "b1", "W2", "b2",
    "Wout", "bout",
)

_POSE_DIM = 4  # x, y, z, yaw
_OUT_DIM = 2 * _POSE_DIM  # pose delta plus per-component log-variance
_MASK_BIAS = -1.0e30  # additive score bias that zeroes padded keys in softmax

# Fresh models start with a wide predictive variance (sigma = 5). Starting
# from sigma = 1 makes the early log-variance gradients proportional to the
# squared residual in metres, which destabilizes SGD on metre-scale scenes.
LOGVAR_INIT = math.log(25.0)

MODEL_FORMAT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes non-finite."""


def cv_predict(state: KinematicState, dt: float) -> KinematicState:
    """Constant-velocity extrapolation of a kinematic state by ``dt``."""
    return KinematicState(
        x=state.x + state.vx * dt,
        y=state.y + state.vy * dt,
        z=state.z + state.vz * dt,
        yaw=state.yaw,
        vx=state.vx,
        vy=state.vy,
        vz=state.vz,
    )


@dataclass(eq=False)
class History:
    """Ordered past poses of one object, oldest first, one row per frame.

    ``poses`` has shape (k, 4) with columns x, y, z, yaw and k >= 1.
    """

    poses: np.ndarray

    def __post_init__(self) -> None:
        poses = np.asarray(self.poses, dtype=float)
        if poses.ndim != 2 or poses.shape[1] != _POSE_DIM:
            raise ValueError(f"history poses must have shape (k, 4), got {poses.shape}")
        if poses.shape[0] < 1:
            raise ValueError("history must contain at least one pose")
        if not np.all(np.isfinite(poses)):
            raise ValueError("history poses must be finite")
        self.poses = poses

    def __len__(self) -> int:
        return self.poses.shape[0]

    @property
    def last_pose(self) -> np.ndarray:
        return self.poses[-1].copy()

    def appended(self, pose: np.ndarray) -> "History":
        return History(np.vstack([self.poses, np.asarray(pose, dtype=float)]))


@dataclass(eq=False)
class PredictorModel:
    params: dict[str, np.ndarray]
    horizon: int
    d_model: int = 32
    d_ff: int = 64
    dropout_rate: float = 0.1

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        missing = [name for name in PARAM_ORDER if name not in self.params]
        if missing:
            raise ValueError(f"model is missing parameters: {missing}")

    def copy_params(self) -> dict[str, np.ndarray]:
        return {name: self.params[name].copy() for name in PARAM_ORDER}


@dataclass(frozen=True)
class PredictionDistribution:
    """Mean and per-component variance of a predicted pose (x, y, z, yaw)."""

    mean: np.ndarray
    variance: np.ndarray

    @property
    def position(self) -> np.ndarray:
        return self.mean[:3]

    @property
    def yaw(self) -> float:
        return float(self.mean[3])


def _param_shapes(horizon: int, d_model: int, d_ff: int) -> dict[str, tuple[int, ...]]:
    d, f = d_model, d_ff
    shapes: dict[str, tuple[int, ...]] = {
        "We": (_POSE_DIM, d), "be": (d,), "Pos": (horizon, d),
        "W1": (d, f), "b1": (f,), "W2": (f, d), "b2": (d,),
        "Wout": (d, _OUT_DIM), "bout": (_OUT_DIM,),
    }
    for name in ("q", "k", "v", "o"):
        shapes[f"W{name}"] = (d, d)
        shapes[f"b{name}"] = (d,)
    return shapes


def init_predictor(
    horizon: int,
    d_model: int = 32,
    d_ff: int = 64,
    dropout_rate: float = 0.1,
    seed: int | np.random.SeedSequence = 0,
) -> PredictorModel:
    """Create a model with Glorot-uniform weights and zero biases."""
    rng = np.random.default_rng(seed)
    shapes = _param_shapes(horizon, d_model, d_ff)
    params: dict[str, np.ndarray] = {}
    for name in PARAM_ORDER:
        shape = shapes[name]
        if name == "Pos":
            params[name] = 0.02 * rng.standard_normal(shape)
        elif len(shape) == 2:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-limit, limit, size=shape)
        else:
            params[name] = np.zeros(shape)
    params["bout"][_POSE_DIM:] = LOGVAR_INIT
    return PredictorModel(
        params=params, horizon=horizon, d_model=d_model, d_ff=d_ff,
        dropout_rate=dropout_rate,
    )


def _featurize(
    histories: Sequence[History], horizon: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack histories into (X, mask, last_pose).

    X is (B, horizon, 4): pose deltas relative to each history's newest
    pose, oldest first. Histories shorter than the horizon are front-padded
    with their oldest pose; mask is False on padded rows.
    """
    batch = len(histories)
    X = np.zeros((batch, horizon, _POSE_DIM))
    mask = np.zeros((batch, horizon), dtype=bool)
    last_pose = np.zeros((batch, _POSE_DIM))
    for i, history in enumerate(histories):
        kept = history.poses[-horizon:]
        m = kept.shape[0]
        padded = np.vstack([np.repeat(kept[:1], horizon - m, axis=0), kept])
        padded = padded.copy()
        padded[:, 3] = np.unwrap(padded[:, 3])
        X[i] = padded - padded[-1]
        mask[i, horizon - m:] = True
        last_pose[i] = history.poses[-1]
    return X, mask, last_pose


def _dropout_masks(
    rng: np.random.Generator | None,
    rate: float,
    batch: int,
    horizon: int,
    d_model: int,
    d_ff: int,
) -> tuple[np.ndarray, np.ndarray] | None:
    """Inverted-dropout keep masks for the attention output and FF hidden layer."""
    if rng is None or rate == 0.0:
        return None
    scale = 1.0 / (1.0 - rate)
    keep1 = (rng.random((batch, horizon, d_model)) >= rate) * scale
    keep2 = (rng.random((batch, horizon, d_ff)) >= rate) * scale
    return keep1, keep2


def _forward_batch(
    model: PredictorModel,
    X: np.ndarray,
    mask: np.ndarray,
    drop: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[np.ndarray, dict]:
    """Run the network on featurized input. Returns (out, cache).

    out is (B, 8): predicted pose delta followed by log-variances.
    """
    p = model.params
    sqrt_d = math.sqrt(model.d_model)

    E = X @ p["We"] + p["be"] + p["Pos"]
    Q = E @ p["Wq"] + p["bq"]
    K = E @ p["Wk"] + p["bk"]
    V = E @ p["Wv"] + p["bv"]

    S = Q @ K.transpose(0, 2, 1) / sqrt_d
    S = S + np.where(mask, 0.0, _MASK_BIAS)[:, None, :]
    S_shift = S - S.max(axis=-1, keepdims=True)
    expS = np.exp(S_shift)
    A = expS / expS.sum(axis=-1, keepdims=True)

    C = A @ V
    AO = C @ p["Wo"] + p["bo"]
    if drop is not None:
        AO = AO * drop[0]
    H1 = E + AO

    Z1 = H1 @ p["W1"] + p["b1"]
    R = np.maximum(Z1, 0.0)
    if drop is not None:
        R = R * drop[1]
    H2 = H1 + R @ p["W2"] + p["b2"]

    counts = mask.sum(axis=1).astype(float)
    pooled = (H2 * mask[..., None]).sum(axis=1) / counts[:, None]
    out = pooled @ p["Wout"] + p["bout"]

    cache = {
        "X": X, "mask": mask, "counts": counts, "E": E, "Q": Q, "K": K, "V": V,
        "A": A, "C": C, "H1": H1, "Z1": Z1, "R": R, "pooled": pooled,
        "drop": drop, "sqrt_d": sqrt_d,
    }
    return out, cache


def _backward_batch(model: PredictorModel, cache: dict, dout: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every parameter, given d loss / d out."""
    p = model.params
    X, mask, counts = cache["X"], cache["mask"], cache["counts"]
    E, Q, K, V = cache["E"], cache["Q"], cache["K"], cache["V"]
    A, C, H1, Z1, R = cache["A"], cache["C"], cache["H1"], cache["Z1"], cache["R"]
    drop, sqrt_d = cache["drop"], cache["sqrt_d"]

    grads: dict[str, np.ndarray] = {}
    grads["Wout"] = cache["pooled"].T @ dout
    grads["bout"] = dout.sum(axis=0)
    dpooled = dout @ p["Wout"].T

    dH2 = (dpooled[:, None, :] * mask[..., None]) / counts[:, None, None]

    # Feed-forward block (residual): H2 = H1 + drop2(relu(H1 W1 + b1)) W2 + b2
    dR = dH2 @ p["W2"].T
    grads["W2"] = np.einsum("btf,btd->fd", R, dH2)
    grads["b2"] = dH2.sum(axis=(0, 1))
    if drop is not None:
        dR = dR * drop[1]
    dZ1 = dR * (Z1 > 0.0)
    grads["W1"] = np.einsum("btd,btf->df", H1, dZ1)
    grads["b1"] = dZ1.sum(axis=(0, 1))
    dH1 = dH2 + dZ1 @ p["W1"].T

    # Attention block (residual): H1 = E + drop1(A V Wo + bo)
    dAO = dH1 if drop is None else dH1 * drop[0]
    grads["Wo"] = np.einsum("btd,bte->de", C, dAO)
    grads["bo"] = dAO.sum(axis=(0, 1))
    dC = dAO @ p["Wo"].T
    dA = dC @ V.transpose(0, 2, 1)
    dV = A.transpose(0, 2, 1) @ dC
    dS = A * (dA - (dA * A).sum(axis=-1, keepdims=True))
    dQ = dS @ K / sqrt_d
    dK = dS.transpose(0, 2, 1) @ Q / sqrt_d

    dE = dH1.copy()
    for name, dproj in (("q", dQ), ("k", dK), ("v", dV)):
        grads[f"W{name}"] = np.einsum("btd,bte->de", E, dproj)
        grads[f"b{name}"] = dproj.sum(axis=(0, 1))
        dE += dproj @ p[f"W{name}"].T

    grads["Pos"] = dE.sum(axis=0)
    grads["We"] = np.einsum("btk,btd->kd", X, dE)
    grads["be"] = dE.sum(axis=(0, 1))
    return grads


def _loss_and_grads(
    model: PredictorModel,
    X: np.ndarray,
    mask: np.ndarray,
    target_delta: np.ndarray,
    drop: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Attenuated regression loss over a featurized batch, with gradients.

    Residuals are (predicted delta - target delta) with the yaw component
    wrapped to (-pi, pi]; the wrap has unit derivative so gradients pass
    through unchanged.
    """
    out, cache = _forward_batch(model, X, mask, drop)
    if not np.all(np.isfinite(out)):
        raise TrainingDivergedError("network output became non-finite")
    residual = out[:, :_POSE_DIM] - target_delta
    residual[:, 3] = wrap_residual(residual[:, 3])
    log_var = out[:, _POSE_DIM:]
    loss = attenuated_loss(residual.ravel(), log_var.ravel())
    if not math.isfinite(loss):
        raise TrainingDivergedError("training loss became non-finite")
    d_r, d_lv = attenuated_loss_grad(residual.ravel(), log_var.ravel())
    dout = np.hstack([d_r.reshape(residual.shape), d_lv.reshape(log_var.shape)])
    return loss, _backward_batch(model, cache, dout)


def predictor_forward(
    model: PredictorModel,
    history: History,
    dropout_seed: int | np.random.SeedSequence | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One forward pass. Returns (pose, log_variance), each shape (4,).

    Without ``dropout_seed`` the pass is deterministic (dropout disabled);
    with a seed, hidden units are zeroed with probability ``dropout_rate``
    and survivors rescaled by 1/(1 - rate).
    """
    X, mask, last_pose = _featurize([history], model.horizon)
    rng = None if dropout_seed is None else np.random.default_rng(dropout_seed)
    drop = _dropout_masks(rng, model.dropout_rate, 1, model.horizon, model.d_model, model.d_ff)
    out, _ = _forward_batch(model, X, mask, drop)
    pose = last_pose[0] + out[0, :_POSE_DIM]
    pose[3] = yaw_normalize(pose[3])
    return pose, out[0, _POSE_DIM:].copy()


def mc_samples(
    model: PredictorModel,
    history: History,
    n_p: int,
    rng_seed: int | np.random.SeedSequence = 0,
) -> np.ndarray:
    """``n_p`` stochastic forward passes, as an (n_p, 4) array of poses.

    All passes share the input; each draws its own dropout masks from a
    generator seeded by ``rng_seed``, so results are reproducible. With
    dropout_rate == 0 the rows are identical.
    """
    if n_p < 1:
        raise ValueError("n_p must be >= 1")
    X1, mask1, last_pose = _featurize([history], model.horizon)
    X = np.repeat(X1, n_p, axis=0)
    mask = np.repeat(mask1, n_p, axis=0)
    rng = np.random.default_rng(rng_seed)
    drop = _dropout_masks(rng, model.dropout_rate, n_p, model.horizon, model.d_model, model.d_ff)
    out, _ = _forward_batch(model, X, mask, drop)
    poses = last_pose[0][None, :] + out[:, :_POSE_DIM]
    poses[:, 3] = wrap_residual(poses[:, 3])
    return poses


def aggregate_pose_samples(samples: np.ndarray) -> PredictionDistribution:
    """Sample mean and population variance of pose samples (rows).

    Positions use the ordinary arithmetic mean; yaw uses the circular mean
    and its variance is the mean squared wrapped deviation from that mean,
    so a cluster of samples straddling the +-pi seam stays tight.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[1] != _POSE_DIM:
        raise ValueError(f"samples must have shape (n, 4), got {samples.shape}")
    if samples.shape[0] < 1:
        raise ValueError("need at least one sample")
    mean = samples.mean(axis=0)
    variance = samples.var(axis=0)
    yaw_mean = math.atan2(np.sin(samples[:, 3]).mean(), np.cos(samples[:, 3]).mean())
    yaw_dev = wrap_residual(samples[:, 3] - yaw_mean)
    mean[3] = yaw_normalize(yaw_mean)
    variance[3] = float(np.mean(yaw_dev**2))
    return PredictionDistribution(mean=mean, variance=variance)


def mc_predict(
    model: PredictorModel,
    history: History,
    n_p: int = 10,
    rng_seed: int | np.random.SeedSequence = 0,
    return_samples: bool = False,
) -> PredictionDistribution | tuple[PredictionDistribution, np.ndarray]:
    """Monte-Carlo dropout prediction: mean pose and per-component variance."""
    samples = mc_samples(model, history, n_p, rng_seed)
    dist = aggregate_pose_samples(samples)
    if return_samples:
        return dist, samples
    return dist


@dataclass
class TrainConfig:
    epochs: int = 40
    learning_rate: float = 0.01
    batch_size: int = 32
    seed: int = 0
    momentum: float = 0.9
    horizon: int = 3
    d_model: int = 32
    d_ff: int = 64
    dropout_rate: float = 0.1
    history_noise: float = 0.0
    clip_norm: float | None = 5.0

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.history_noise < 0.0:
            raise ValueError("history_noise must be >= 0")
        if self.clip_norm is not None and self.clip_norm <= 0.0:
            raise ValueError("clip_norm must be positive or None")


@dataclass(eq=False)
class TrainResult:
    model: PredictorModel
    losses: np.ndarray = field(repr=False)


def _target_deltas(targets: np.ndarray, last_pose: np.ndarray) -> np.ndarray:
    delta = targets - last_pose
    delta[:, 3] = wrap_residual(delta[:, 3])
    return delta


def train_predictor(
    dataset: Sequence[tuple[History, np.ndarray]],
    config: TrainConfig | None = None,
) -> TrainResult:
    """Fit the attention predictor on (history, next pose) pairs with SGD.

    ``losses`` holds the deterministic full-dataset loss before training and
    after each epoch. Mini-batches use dropout; the reported curve does not,
    so it is comparable across epochs. If the final loss exceeds the initial
    one the best intermediate snapshot is returned instead and its loss is
    appended to the curve, so the returned model never underperforms the
    initial weights on the training set.
    """
    if config is None:
        config = TrainConfig()
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")

    histories = [pair[0] for pair in dataset]
    targets = np.asarray([np.asarray(pair[1], dtype=float) for pair in dataset])
    if targets.ndim != 2 or targets.shape[1] != _POSE_DIM:
        raise ValueError("each training target must be a pose of shape (4,)")

    root = np.random.SeedSequence(config.seed)
    init_ss, order_ss, drop_ss, noise_ss = root.spawn(4)
    model = init_predictor(
        horizon=config.horizon, d_model=config.d_model, d_ff=config.d_ff,
        dropout_rate=config.dropout_rate, seed=init_ss,
    )

    X, mask, last_pose = _featurize(histories, config.horizon)
    target_delta = _target_deltas(targets, last_pose)
    n = X.shape[0]

    def full_loss() -> float:
        loss, _ = _loss_and_grads(model, X, mask, target_delta, drop=None)
        return loss

    order_rng = np.random.default_rng(order_ss)
    drop_rng = np.random.default_rng(drop_ss)
    noise_rng = np.random.default_rng(noise_ss)

    losses = [full_loss()]
    best_loss = losses[0]
    best_params = model.copy_params()
    velocity = {name: np.zeros_like(model.params[name]) for name in PARAM_ORDER}

    for _ in range(config.epochs):
        perm = order_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            Xb = X[idx]
            if config.history_noise > 0.0:
                Xb = Xb + noise_rng.normal(0.0, config.history_noise, size=Xb.shape)
            drop = _dropout_masks(
                drop_rng, config.dropout_rate, len(idx),
                config.horizon, config.d_model, config.d_ff,
            )
            _, grads = _loss_and_grads(model, Xb, mask[idx], target_delta[idx], drop)
            if config.clip_norm is not None:
                gnorm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
                if gnorm > config.clip_norm:
                    scale = config.clip_norm / gnorm
                    grads = {name: g * scale for name, g in grads.items()}
            for name in PARAM_ORDER:
                velocity[name] = config.momentum * velocity[name] - config.learning_rate * grads[name]
                model.params[name] += velocity[name]

        epoch_loss = full_loss()
        if not math.isfinite(epoch_loss):
            raise TrainingDivergedError(
                f"training loss became non-finite after epoch {len(losses)}"
            )
        losses.append(epoch_loss)
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best_params = model.copy_params()

    if losses[-1] > losses[0]:
        model.params = best_params
        losses.append(best_loss)
    return TrainResult(model=model, losses=np.asarray(losses))


def save_predictor(model: PredictorModel, path: str | Path) -> None:
    """Write model weights and hyperparameters to a JSON file."""
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": "predictor_model",
        "horizon": model.horizon,
        "d_model": model.d_model,
        "d_ff": model.d_ff,
        "dropout_rate": model.dropout_rate,
        "params": {
            name: {
                "shape": list(model.params[name].shape),
                "data": [float(v) for v in model.params[name].ravel()],
            }
            for name in PARAM_ORDER
        },
    }
    write_json(path, payload)


def load_predictor(path: str | Path) -> PredictorModel:
    payload = read_json(path)
    if payload.get("kind") != "predictor_model":
        raise SchemaError(f"{path}: not a predictor model file")
    if payload.get("format_version") != MODEL_FORMAT_VERSION:
        raise SchemaError(f"{path}: unsupported format_version {payload.get('format_version')!r}")
    horizon = int(payload["horizon"])
    d_model = int(payload["d_model"])
    d_ff = int(payload["d_ff"])
    expected = _param_shapes(horizon, d_model, d_ff)
    params: dict[str, np.ndarray] = {}
    for name in PARAM_ORDER:
        if name not in payload["params"]:
            raise SchemaError(f"{path}: missing parameter {name!r}")
        entry = payload["params"][name]
        shape = tuple(entry["shape"])
        if shape != expected[name]:
            raise SchemaError(
                f"{path}: parameter {name!r} has shape {shape}, expected {expected[name]}"
            )
        data = np.asarray(entry["data"], dtype=float)
        if data.size != int(np.prod(shape)):
            raise SchemaError(f"{path}: parameter {name!r} has wrong element count")
        params[name] = data.reshape(shape)
    return PredictorModel(
        params=params, horizon=horizon, d_model=d_model, d_ff=d_ff,
        dropout_rate=float(payload["dropout_rate"]),
    )
