"""Learned mission power-demand predictor.

A small tanh MLP maps plan features (mean speed, path length, mean
|curvature|) to mission-mean demand in watts.  Two backends share the same
network code: "deterministic" is a single net, "ensemble" is a bootstrap
ensemble whose member spread doubles as a predictive uncertainty estimate.

Training standardizes both features and labels from the training split and
runs plain gradient descent, theta' = theta - alpha * grad(L), on the mean
halved squared residual.  The un-squared batch form 0.5 * ||residual|| is
kept as a separate reported metric (``loss``); it is not what is optimized,
since its self-normalizing gradient makes step sizes meaningless.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .powermodel import BaselineParams, DemandParams, DEMAND_PRESETS, demand_profile
from .trajectory import Trajectory, features

__all__ = [
    "FeatureVector",
    "LabeledDataset",
    "TrainConfig",
    "MLPModel",
    "Predictor",
    "TrainingDivergedError",
    "DEFAULT_ARCH",
    "loss",
    "loss_and_grads",
    "train",
    "train_predictor",
    "split_dataset",
    "plan_features",
    "mae",
    "save_model",
    "load_model",
    "generate_dataset",
]

DEFAULT_ARCH = (3, 32, 32, 1)

DATASET_HEADER = ["velocity", "length_d", "mean_abs_curv", "label_w"]


class TrainingDivergedError(RuntimeError):
    """Non-finite loss or gradients encountered during training."""


@dataclass(frozen=True)
class FeatureVector:
    """Plan features: mean speed (m/s), length (m), mean |curvature| (1/m)."""

    velocity: float
    length_d: float
    mean_abs_curvature: float

    def as_array(self) -> np.ndarray:
        return np.array([self.velocity, self.length_d, self.mean_abs_curvature])


@dataclass
class LabeledDataset:
    """Feature rows (n, 3) and mission-mean demand labels (n,) in watts."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=float)
        if self.features.ndim != 2 or self.features.shape[1] != 3:
            raise ValueError("features must have shape (n, 3)")
        if len(self.features) != len(self.labels):
            raise ValueError("features/labels length mismatch")
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.labels))):
            raise ValueError("non-finite dataset values")

    def __len__(self) -> int:
        return len(self.labels)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(DATASET_HEADER)
            for row, label in zip(self.features, self.labels):
                writer.writerow([repr(float(v)) for v in row] + [repr(float(label))])

    @classmethod
    def from_csv(cls, path) -> "LabeledDataset":
        data = np.atleast_1d(np.genfromtxt(path, delimiter=",", names=True))
        feats = np.column_stack([data["velocity"], data["length_d"], data["mean_abs_curv"]])
        return cls(feats, np.asarray(data["label_w"], dtype=float))


@dataclass(frozen=True)
class TrainConfig:
    seed: int
    learning_rate: float = 1e-3
    batch_size: int = 1100
    epochs: int = 500
    train_fraction: float = 0.8

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size >= 1 and epochs >= 0 required")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")


@dataclass
class MLPModel:
    """Fully-connected tanh net with linear output, plus frozen normalization."""

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    feat_mean: np.ndarray = field(default_factory=lambda: np.zeros(3))
    feat_scale: np.ndarray = field(default_factory=lambda: np.ones(3))
    label_mean: float = 0.0
    label_scale: float = 1.0
    seed: int = 0

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Predicted demand in watts for feature rows (n, 3) or a single (3,)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        xn = (x - self.feat_mean) / self.feat_scale
        yn = _forward_normalized(self, xn)[-1][:, 0]
        return yn * self.label_scale + self.label_mean

    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


def init_mlp(layer_sizes=DEFAULT_ARCH, seed: int = 0) -> MLPModel:
    """Xavier-initialized net; output bias 0 = training-label mean after scaling."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        weights.append(rng.normal(0.0, np.sqrt(1.0 / n_in), size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return MLPModel(tuple(layer_sizes), weights, biases, seed=seed)


def _forward_normalized(model: MLPModel, xn: np.ndarray) -> list[np.ndarray]:
    """Activations per layer on already-normalized input; last is linear."""
    acts = [xn]
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = acts[-1] @ w + b
        acts.append(z if i == last else np.tanh(z))
    return acts


def loss(labels: np.ndarray, predictions: np.ndarray) -> float:
    """Reported batch loss: half the Euclidean norm of the residual vector."""
    r = np.asarray(labels, dtype=float) - np.asarray(predictions, dtype=float)
    return 0.5 * float(np.linalg.norm(np.atleast_1d(r)))


def training_objective(labels: np.ndarray, predictions: np.ndarray) -> float:
    """Optimized loss: mean halved squared residual."""
    r = np.asarray(labels, dtype=float) - np.asarray(predictions, dtype=float)
    return 0.5 * float(np.mean(r * r))


def loss_and_grads(model: MLPModel, xn: np.ndarray, yn: np.ndarray):
    """Objective and its gradients wrt every weight/bias, normalized space.

    Backprop for L = (1/2m) * sum((yhat - y)^2); returns (L, grads_w, grads_b).
    """
    m = len(xn)
    acts = _forward_normalized(model, xn)
    yhat = acts[-1]
    resid = yhat - yn.reshape(-1, 1)
    objective = 0.5 * float(np.mean(resid[:, 0] ** 2))

    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.biases)
    delta = resid / m
    for i in range(len(model.weights) - 1, -1, -1):
        grads_w[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (1.0 - acts[i] ** 2)
    return objective, grads_w, grads_b


def _apply_update(model: MLPModel, grads_w, grads_b, alpha: float) -> None:
    for w, gw in zip(model.weights, grads_w):
        w -= alpha * gw
    for b, gb in zip(model.biases, grads_b):
        b -= alpha * gb


@dataclass
class TrainResult:
    model: MLPModel
    epochs: np.ndarray
    train_loss: np.ndarray  # optimized objective in watts^2, full train split
    val_loss: np.ndarray

    def curve_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss"])
            for e, tr, va in zip(self.epochs, self.train_loss, self.val_loss):
                writer.writerow([int(e), repr(float(tr)), repr(float(va))])


def _split_indices(n: int, train_fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    n_train = min(max(int(round(n * train_fraction)), 1), n - 1)
    return perm[:n_train], perm[n_train:]


def split_dataset(dataset: LabeledDataset, config: TrainConfig):
    """The exact train/validation split train() will use for this config."""
    rng = np.random.default_rng(config.seed)
    train_idx, val_idx = _split_indices(len(dataset), config.train_fraction, rng)
    return (
        LabeledDataset(dataset.features[train_idx], dataset.labels[train_idx]),
        LabeledDataset(dataset.features[val_idx], dataset.labels[val_idx]),
    )


def plan_features(trajectory: Trajectory) -> FeatureVector:
    """Predictor inputs of a planned trajectory; velocity is the mean speed."""
    feats = features(trajectory)
    return FeatureVector(
        velocity=float(np.mean(feats.speed)),
        length_d=feats.length_d,
        mean_abs_curvature=feats.mean_abs_curvature,
    )


def train(
    model: MLPModel,
    dataset: LabeledDataset,
    config: TrainConfig,
    bootstrap_seed: int | None = None,
) -> TrainResult:
    """Gradient-descent training with a seeded shuffle split.

    Normalization statistics are frozen from the training split before the
    first update.  The effective batch is min(batch_size, train split), and
    every epoch is one full pass over the (reshuffled) training rows.  When
    ``bootstrap_seed`` is given the training rows are resampled with
    replacement once up front (ensemble members); validation rows are shared.
    """
    if len(dataset) < 2:
        raise ValueError("dataset too small to split")
    rng = np.random.default_rng(config.seed)
    train_idx, val_idx = _split_indices(len(dataset), config.train_fraction, rng)
    if bootstrap_seed is not None:
        boot_rng = np.random.default_rng(bootstrap_seed)
        train_idx = boot_rng.choice(train_idx, size=len(train_idx), replace=True)

    x_train = dataset.features[train_idx]
    y_train = dataset.labels[train_idx]
    x_val = dataset.features[val_idx]
    y_val = dataset.labels[val_idx]

    model.feat_mean = x_train.mean(axis=0)
    scale = x_train.std(axis=0)
    model.feat_scale = np.where(scale > 1e-12, scale, 1.0)
    model.label_mean = float(y_train.mean())
    lscale = float(y_train.std())
    model.label_scale = lscale if lscale > 1e-12 else 1.0

    xn = (x_train - model.feat_mean) / model.feat_scale
    yn = (y_train - model.label_mean) / model.label_scale

    batch = min(config.batch_size, len(xn))
    epochs, tr_hist, va_hist = [], [], []
    for epoch in range(config.epochs):
        order = rng.permutation(len(xn))
        for start in range(0, len(order), batch):
            idx = order[start : start + batch]
            objective, gw, gb = loss_and_grads(model, xn[idx], yn[idx])
            if not np.isfinite(objective):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            _apply_update(model, gw, gb, config.learning_rate)
        tr = training_objective(y_train, model.forward(x_train))
        va = training_objective(y_val, model.forward(x_val))
        if not (np.isfinite(tr) and np.isfinite(va)):
            raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
        epochs.append(epoch)
        tr_hist.append(tr)
        va_hist.append(va)
    return TrainResult(model, np.array(epochs), np.array(tr_hist), np.array(va_hist))


@dataclass
class Predictor:
    """Backend wrapper: a single net or an ensemble of them."""

    backend: str
    members: list[MLPModel]
    seed: int = 0

    def __post_init__(self):
        if self.backend not in ("deterministic", "ensemble"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if not self.members:
            raise ValueError("predictor needs at least one member")

    def forward(self, x) -> np.ndarray:
        preds = np.stack([m.forward(x) for m in self.members])
        return preds.mean(axis=0)

    def forward_std(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Mean prediction and member spread (zero for a single net)."""
        preds = np.stack([m.forward(x) for m in self.members])
        return preds.mean(axis=0), preds.std(axis=0)

    def predict_scalar(self, feats: FeatureVector) -> float:
        return float(self.forward(feats.as_array())[0])


_MEMBER_SEED_STRIDE = 100003


def train_predictor(
    dataset: LabeledDataset,
    config: TrainConfig,
    backend: str = "deterministic",
    members: int = 10,
    layer_sizes=DEFAULT_ARCH,
) -> tuple[Predictor, list[TrainResult]]:
    """Train a backend and return it with the per-member loss curves.

    Ensemble member k trains from seed + k*stride on a bootstrap resample of
    the training split; a 1-member ensemble skips the bootstrap so it reduces
    exactly to the deterministic backend.
    """
    if backend == "deterministic":
        members = 1
    if members < 1:
        raise ValueError("members must be >= 1")
    results = []
    nets = []
    for k in range(members):
        member_seed = config.seed + k * _MEMBER_SEED_STRIDE
        net = init_mlp(layer_sizes, seed=member_seed)
        member_config = TrainConfig(
            seed=member_seed,
            learning_rate=config.learning_rate,
            batch_size=config.batch_size,
            epochs=config.epochs,
            train_fraction=config.train_fraction,
        )
        bootstrap = member_seed + 1 if members > 1 else None
        results.append(train(net, dataset, member_config, bootstrap_seed=bootstrap))
        nets.append(net)
    return Predictor(backend, nets, seed=config.seed), results


def mae(predictor: Predictor | MLPModel, dataset: LabeledDataset) -> float:
    """Mean absolute prediction error in watts."""
    preds = predictor.forward(dataset.features)
    return float(np.mean(np.abs(preds - dataset.labels)))


def save_model(predictor: Predictor, path) -> None:
    doc = {
        "schema": 1,
        "backend": predictor.backend,
        "seed": predictor.seed,
        "members": [
            {
                "layer_sizes": list(m.layer_sizes),
                "weights_flat": np.concatenate([w.ravel() for w in m.weights]).tolist(),
                "biases_flat": np.concatenate([b.ravel() for b in m.biases]).tolist(),
                "feat_mean": m.feat_mean.tolist(),
                "feat_scale": m.feat_scale.tolist(),
                "label_mean": m.label_mean,
                "label_scale": m.label_scale,
                "seed": m.seed,
            }
            for m in predictor.members
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_model(path) -> Predictor:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema") != 1:
        raise ValueError(f"unsupported model schema {doc.get('schema')!r}")
    nets = []
    for m in doc["members"]:
        sizes = tuple(m["layer_sizes"])
        weights, biases = [], []
        wflat = np.asarray(m["weights_flat"], dtype=float)
        bflat = np.asarray(m["biases_flat"], dtype=float)
        wofs = bofs = 0
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            weights.append(wflat[wofs : wofs + n_in * n_out].reshape(n_in, n_out).copy())
            wofs += n_in * n_out
            biases.append(bflat[bofs : bofs + n_out].copy())
            bofs += n_out
        nets.append(
            MLPModel(
                sizes,
                weights,
                biases,
                feat_mean=np.asarray(m["feat_mean"], dtype=float),
                feat_scale=np.asarray(m["feat_scale"], dtype=float),
                label_mean=float(m["label_mean"]),
                label_scale=float(m["label_scale"]),
                seed=int(m.get("seed", 0)),
            )
        )
    return Predictor(doc["backend"], nets, seed=int(doc.get("seed", 0)))


def generate_dataset(
    count: int,
    seed: int,
    baseline: BaselineParams = BaselineParams(),
    demand: DemandParams = DEMAND_PRESETS["scaled"],
    complexities: tuple[str, ...] = ("low_dynamic", "high_dynamic"),
    scenario_sampler=None,
) -> LabeledDataset:
    """Plan missions over random seeded scenarios and label them.

    Each row plans one scenario at a random aggressiveness, extracts the plan
    features, and labels with the mission-mean closed-form demand.  Planner
    failures are skipped and retried (new scenario); if fewer than half the
    attempts succeed the generator raises instead of returning a short set.
    """
    from . import planner as planner_mod
    from . import world as world_mod

    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    rows, labels = [], []
    attempts = 0
    max_attempts = 2 * count
    while len(rows) < count and attempts < max_attempts:
        attempts += 1
        if scenario_sampler is not None:
            config = scenario_sampler(rng)
        else:
            config = world_mod.generate_scenario(
                complexity=complexities[int(rng.integers(len(complexities)))],
                seed=int(rng.integers(2**31 - 1)),
            )
        lam = float(rng.uniform(0.0, 1.0))
        params = planner_mod.PlanParams.from_aggressiveness("agility_enhanced", lam)
        try:
            wrld = world_mod.spawn_scenario(config)
            traj = planner_mod.plan_initial(wrld, config.start, config.goal, params)
        except planner_mod.PlanningInfeasibleError:
            continue
        profile = demand_profile(traj, baseline, demand)
        rows.append(plan_features(traj).as_array())
        labels.append(profile.mean_power)
    if len(rows) < count:
        raise RuntimeError(
            f"dataset generation: only {len(rows)}/{count} plans succeeded "
            f"in {attempts} attempts"
        )
    return LabeledDataset(np.array(rows), np.array(labels))
