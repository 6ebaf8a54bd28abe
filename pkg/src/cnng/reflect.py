"""Reflection: turn one trained network into a routed group of networks.

The general network is trained on everything, its training mistakes are
split with K-Means, one specialist is trained per cluster, and a decision
tree learns to send each input to network 0 (general) or 1 + cluster id.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .cluster import KMeansModel, kmeans_assign, kmeans_fit
from .data import Dataset
from .nn import (
    FeedforwardNetwork,
    TrainConfig,
    forward,
    init_network,
    mlp_specs,
    predict,
    sgd_steps,
    train,
)
from .router import DecisionTree, TreeParams, tree_fit, tree_predict

log = logging.getLogger(__name__)


class ReflectionError(RuntimeError):
    code = "reflection_failed"


class NothingToReflect(ReflectionError):
    """The general network made no training mistakes."""

    code = "nothing_to_reflect"


class TooFewErrors(ReflectionError):
    """Fewer error cases than requested specialists."""

    code = "too_few_errors"


@dataclass(frozen=True)
class KMeansConfig:
    seed: int = 42
    max_iter: int = 100
    tol: float = 1e-6
    restarts: int = 5


@dataclass(frozen=True)
class ReflectionConfig:
    k_specialists: int = 2
    hidden: tuple[int, ...] = (256,)
    general_train: TrainConfig = field(default_factory=TrainConfig)
    specialist_train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=20, seed=1042))
    kmeans: KMeansConfig = field(default_factory=KMeansConfig)
    tree_params: TreeParams = field(default_factory=TreeParams)
    cv_folds: int = 5
    # None means hard errors (argmax != label); a float selects examples whose
    # cross-entropy exceeds it instead.
    error_loss_threshold: Optional[float] = None

    def __post_init__(self):
        if self.k_specialists < 1:
            raise ValueError("k_specialists must be >= 1")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be >= 2")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def echo(self) -> dict[str, str]:
        """Flat key=value view of every knob, used in model metadata."""
        flat = {}

        def walk(prefix, value):
            if isinstance(value, dict):
                for k in sorted(value):
                    walk(f"{prefix}.{k}" if prefix else k, value[k])
            else:
                flat[prefix] = ",".join(map(str, value)) if isinstance(value, (list, tuple)) else str(value)

        walk("", asdict(self))
        return flat


def specialist_seed(config: ReflectionConfig, index: int) -> int:
    return (config.specialist_train.seed + index) % 2**64


@dataclass
class ErrorSet:
    indices: np.ndarray
    inputs: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)


@dataclass
class CnngModel:
    general: FeedforwardNetwork
    specialists: list[FeedforwardNetwork]
    task_classifier: DecisionTree
    kmeans: KMeansModel
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not (len(self.specialists) == self.kmeans.k == self.task_classifier.num_network_ids - 1):
            raise ValueError("specialist count, k and router id count disagree")
        for net in self.specialists:
            if net.input_dim != self.general.input_dim or net.num_classes != self.general.num_classes:
                raise ValueError("all networks must share input_dim and num_classes")

    @property
    def networks(self) -> list[FeedforwardNetwork]:
        return [self.general, *self.specialists]

    @property
    def input_dim(self) -> int:
        return self.general.input_dim

    @property
    def num_classes(self) -> int:
        return self.general.num_classes


def collect_errors(net: FeedforwardNetwork, inputs, labels,
                   loss_threshold: float | None = None) -> ErrorSet:
    """Training examples the network gets wrong, in dataset order."""
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if loss_threshold is None:
        wrong = predict(net, x) != y
    else:
        probs = forward(net, x)
        wrong = -np.log(probs[np.arange(len(y)), y]) > loss_threshold
    idx = np.flatnonzero(wrong)
    return ErrorSet(idx, x[idx], y[idx])


def router_labels(n: int, errors: ErrorSet, cluster_ids: np.ndarray) -> np.ndarray:
    """0 for examples the general network handles, 1 + cluster id for its errors."""
    ids = np.zeros(n, dtype=np.int64)
    ids[errors.indices] = 1 + np.asarray(cluster_ids, dtype=np.int64)
    return ids


def train_specialist(config: ReflectionConfig, index: int, input_dim: int, num_classes: int,
                     inputs, labels) -> FeedforwardNetwork:
    seed = specialist_seed(config, index)
    net = init_network(mlp_specs(input_dim, config.hidden, num_classes), seed)
    tc = TrainConfig(config.specialist_train.learning_rate, config.specialist_train.batch_size,
                     config.specialist_train.epochs, seed, config.specialist_train.shuffle)
    return train(net, inputs, labels, tc)[0]


def error_clusters(model: CnngModel, train_set: Dataset,
                   loss_threshold: float | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
    """Recover each specialist's training data from the general network and centroids."""
    errors = collect_errors(model.general, train_set.inputs, train_set.labels, loss_threshold)
    if len(errors) == 0:
        return [(np.empty((0, model.input_dim)), np.empty(0, dtype=np.int64))] * model.kmeans.k
    assign = kmeans_assign(model.kmeans, errors.inputs)
    return [(errors.inputs[assign == j], errors.labels[assign == j]) for j in range(model.kmeans.k)]


def reflect(train_set: Dataset, config: ReflectionConfig,
            general: FeedforwardNetwork | None = None) -> CnngModel:
    """Build a CNNG from a training set.

    Pass ``general`` to reuse an already trained general network; otherwise
    one is initialised and trained with ``config.general_train``.
    """
    if len(train_set) == 0:
        raise ValueError("cannot reflect on an empty training set")
    x, y = train_set.inputs, train_set.labels
    input_dim, num_classes = x.shape[1], train_set.num_classes

    if general is None:
        specs = mlp_specs(input_dim, config.hidden, num_classes)
        general = train(init_network(specs, config.general_train.seed), x, y, config.general_train)[0]
    log.info("general network trained")

    errors = collect_errors(general, x, y, config.error_loss_threshold)
    if len(errors) == 0:
        raise NothingToReflect("the general network has no training errors to reflect on")
    if len(errors) < config.k_specialists:
        raise TooFewErrors(
            f"only {len(errors)} error cases for k={config.k_specialists}; reduce k"
        )
    log.info("%d error cases (%.2f%% of training data)", len(errors), 100 * len(errors) / len(y))

    km = config.kmeans
    kmodel, assign = kmeans_fit(errors.inputs, config.k_specialists, km.seed, km.max_iter, km.tol, km.restarts)

    specialists = []
    for j in range(config.k_specialists):
        members = assign == j
        specialists.append(train_specialist(config, j, input_dim, num_classes,
                                            errors.inputs[members], errors.labels[members]))
        log.info("specialist %d trained on %d examples", j + 1, int(members.sum()))

    ids = router_labels(len(y), errors, assign)
    tree = tree_fit(x, ids, config.tree_params, num_network_ids=config.k_specialists + 1)

    model = CnngModel(general, specialists, tree, kmodel)
    train_acc = float(np.mean(cnng_predict(model, x) == y))
    meta = {f"config.{k}": v for k, v in config.echo().items()}
    meta.update({
        "dataset.name": train_set.name,
        "dataset.fingerprint": train_set.fingerprint(),
        "dataset.size": str(len(y)),
        "train.error_count": str(len(errors)),
        "train.cnng_accuracy": repr(train_acc),
        "train.general_accuracy": repr(float(np.mean(predict(general, x) == y))),
        "train.sgd_steps.0": str(sgd_steps(len(y), config.general_train)),
    })
    for j in range(config.k_specialists):
        meta[f"train.cluster_size.{j + 1}"] = str(int(np.sum(assign == j)))
        meta[f"train.sgd_steps.{j + 1}"] = str(sgd_steps(int(np.sum(assign == j)), config.specialist_train))
    model.metadata = meta
    return model


def route(model: CnngModel, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    return tree_predict(model.task_classifier, x if x.ndim == 2 else x[None, :])


def cnng_predict(model: CnngModel, x):
    """Route each input to one network and return that network's prediction."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    batch = arr[None, :] if single else arr
    if batch.shape[1] != model.input_dim:
        raise ValueError(f"expected inputs of length {model.input_dim}, got {batch.shape[1]}")
    ids = route(model, batch)
    out = np.empty(len(batch), dtype=np.int64)
    for net_id, net in enumerate(model.networks):
        members = ids == net_id
        if members.any():
            out[members] = predict(net, batch[members])
    return int(out[0]) if single else out


@dataclass
class NetworkReport:
    network_id: int
    name: str
    used_fraction: float
    overall_accuracy: float
    specific_task_accuracy: Optional[float]
    cluster_size: Optional[int] = None
    cv_folds: Optional[int] = None
    sgd_steps: Optional[int] = None


@dataclass
class EvaluationReport:
    overall_accuracy: float
    per_network: list[NetworkReport]
    error_count: int
    total: int
    notes: list[str] = field(default_factory=list)
    train_error_fraction: Optional[float] = None

    @property
    def general_accuracy(self) -> float:
        return self.per_network[0].overall_accuracy


def _fold_accuracy(config: ReflectionConfig, index: int, input_dim: int, num_classes: int,
                   x: np.ndarray, y: np.ndarray, folds: int, seed: int) -> float:
    order = np.random.default_rng(seed).permutation(len(y))
    parts = np.array_split(order, folds)
    scores = []
    for i, held in enumerate(parts):
        fit_idx = np.concatenate([p for j, p in enumerate(parts) if j != i])
        net = train_specialist(config, index, input_dim, num_classes, x[fit_idx], y[fit_idx])
        scores.append(float(np.mean(predict(net, x[held]) == y[held])))
    return float(np.mean(scores))


def evaluate(model: CnngModel, test_set: Dataset, cv_folds: int = 5,
             cluster_data: list[tuple[np.ndarray, np.ndarray]] | None = None,
             config: ReflectionConfig | None = None) -> EvaluationReport:
    """Table-2 style breakdown of a model on a test set.

    ``cluster_data`` holds each specialist's (inputs, labels) training cluster;
    specific-task accuracy of specialist j is the mean cross-validated accuracy
    of fresh specialists trained on folds of cluster j. Without it those
    entries are None. ``config`` supplies the specialist architecture and
    training schedule (defaults to ReflectionConfig()).
    """
    if len(test_set) == 0:
        raise ValueError("cannot evaluate on an empty test set")
    if cv_folds < 2:
        raise ValueError("cv_folds must be >= 2")
    config = config or ReflectionConfig()
    x, y = test_set.inputs, test_set.labels
    n = len(y)
    ids = route(model, x)
    routed = cnng_predict(model, x)
    notes = []
    per_network = []
    for net_id, net in enumerate(model.networks):
        used = float(np.count_nonzero(ids == net_id)) / n
        overall = float(np.mean(predict(net, x) == y))
        steps = model.metadata.get(f"train.sgd_steps.{net_id}")
        steps = int(steps) if steps is not None else None
        if net_id == 0:
            per_network.append(NetworkReport(0, "GenNet", used, overall, overall, sgd_steps=steps))
            continue
        specific, size, folds = None, None, None
        if cluster_data is not None:
            cx, cy = cluster_data[net_id - 1]
            size = len(cy)
            folds = min(cv_folds, size)
            if folds < cv_folds:
                notes.append(f"SpecNet{net_id}: cluster has {size} examples, cv folds reduced "
                             f"from {cv_folds} to {folds}")
            if folds >= 2:
                specific = _fold_accuracy(config, net_id - 1, model.input_dim, model.num_classes,
                                          cx, cy, folds, specialist_seed(config, net_id - 1))
            else:
                notes.append(f"SpecNet{net_id}: too few examples for cross-validation")
        per_network.append(NetworkReport(net_id, f"SpecNet{net_id}", used, overall, specific,
                                         size, folds, steps))

    train_err = None
    if "train.error_count" in model.metadata and "dataset.size" in model.metadata:
        train_err = int(model.metadata["train.error_count"]) / int(model.metadata["dataset.size"])
    correct = int(np.count_nonzero(routed == y))
    return EvaluationReport(correct / n, per_network, n - correct, n, notes, train_err)
