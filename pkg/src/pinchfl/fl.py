"""Desk-scale federated learning on a synthetic non-IID Gaussian-mixture task.

Clients hold slices of a 10-class Gaussian mixture, run one full-batch
gradient step on a linear softmax model per round and the server takes the
dataset-size-weighted average. Round wall-clock time comes from the latency
model of whichever antenna scheme is being simulated.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .fuzzy import FuzzyClassifier, Selection, classify_and_select
from .noma import RoundInstance
from .oracle import BaselineKind, BaselineOutcome, make_instance
from .topology import ClientProfile, NetworkGeometry, conventional_gain


class PartitionError(ValueError):
    pass


@dataclass
class LocalDataset:
    features: np.ndarray
    labels: np.ndarray
    owner: int

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class SyntheticTask:
    means: np.ndarray  # (classes, features)
    noise: float

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]

    @property
    def n_features(self) -> int:
        return self.means.shape[1]

    def sample(self, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        x = self.means[labels] + self.noise * rng.standard_normal((len(labels), self.n_features))
        return x / np.sqrt(self.n_features)


def make_task(n_classes: int = 10, n_features: int = 32, noise: float = 2.0,
              seed: int = 0) -> SyntheticTask:
    rng = np.random.default_rng(seed)
    return SyntheticTask(rng.standard_normal((n_classes, n_features)), noise)


def _split_counts(total: int, weights: np.ndarray) -> np.ndarray:
    """Largest-remainder rounding of ``total * weights``."""
    raw = total * weights / weights.sum()
    counts = np.floor(raw).astype(int)
    short = total - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def partition_noniid(total: int, n_classes: int, n_clients: int, skew: float, seed: int,
                     task: SyntheticTask | None = None) -> list[LocalDataset]:
    """Dirichlet label-skew partition of ``total`` balanced samples.

    For each class, its samples are split over clients with proportions drawn
    from Dirichlet(skew). Small ``skew`` concentrates each client on few
    labels; ``skew -> inf`` gives near-uniform label histograms. Every client
    receives at least one sample.
    """
    if n_clients < 1 or n_classes < 2:
        raise PartitionError("need at least one client and two classes")
    if total < n_clients:
        raise PartitionError(f"{total} samples cannot cover {n_clients} clients")
    if skew <= 0:
        raise PartitionError("skew must be > 0")
    rng = np.random.default_rng(seed)
    task = task or make_task(n_classes, seed=seed)
    per_class = _split_counts(total, np.ones(n_classes))
    counts = np.zeros((n_clients, n_classes), dtype=int)
    for c in range(n_classes):
        if np.isinf(skew) or skew > 1e6:
            weights = np.ones(n_clients)
        else:
            weights = rng.dirichlet(np.full(n_clients, skew))
        counts[:, c] = _split_counts(int(per_class[c]), weights)
    # Top up empty clients from the largest one, one sample at a time.
    for i in np.flatnonzero(counts.sum(axis=1) == 0):
        donor = int(np.argmax(counts.sum(axis=1)))
        label = int(np.argmax(counts[donor]))
        counts[donor, label] -= 1
        counts[i, label] += 1
    out = []
    for i in range(n_clients):
        labels = np.repeat(np.arange(n_classes), counts[i])
        labels = rng.permutation(labels)
        out.append(LocalDataset(task.sample(labels, rng), labels, i))
    return out


def init_params(n_classes: int, n_features: int) -> np.ndarray:
    return np.zeros(n_classes * n_features + n_classes)


def _unpack(params: np.ndarray, n_classes: int, n_features: int):
    expected = n_classes * n_features + n_classes
    if params.size != expected:
        raise ValueError(f"parameter vector has {params.size} entries, expected {expected}")
    w = params[: n_classes * n_features].reshape(n_classes, n_features)
    b = params[n_classes * n_features:]
    return w, b


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def local_loss(params: np.ndarray, data: LocalDataset, n_classes: int) -> float:
    """Mean cross-entropy of the linear softmax model over the local samples."""
    if len(data) == 0:
        raise ValueError(f"client {data.owner} has no samples; loss undefined")
    w, b = _unpack(params, n_classes, data.features.shape[1])
    logp = _log_softmax(data.features @ w.T + b)
    return float(-logp[np.arange(len(data)), data.labels].mean())


def local_grad(params: np.ndarray, data: LocalDataset, n_classes: int) -> np.ndarray:
    if len(data) == 0:
        raise ValueError(f"client {data.owner} has no samples; loss undefined")
    x = data.features
    w, b = _unpack(params, n_classes, x.shape[1])
    p = np.exp(_log_softmax(x @ w.T + b))
    p[np.arange(len(data)), data.labels] -= 1.0
    p /= len(data)
    return np.concatenate([(p.T @ x).ravel(), p.sum(axis=0)])


def local_sgd_step(params: np.ndarray, data: LocalDataset, lr: float, n_classes: int,
                   grad_fn: Callable | None = None) -> np.ndarray:
    """One full-batch gradient step. ``grad_fn(params, data)`` swaps in another loss."""
    if lr < 0:
        raise ValueError("learning rate must be >= 0")
    g = grad_fn(params, data) if grad_fn is not None else local_grad(params, data, n_classes)
    return params - lr * g


def aggregate(params_list: list[np.ndarray], sizes: list[float]) -> np.ndarray:
    """Dataset-size-weighted average of client models."""
    if not params_list:
        raise ValueError("nothing to aggregate")
    sizes = np.asarray(sizes, dtype=float)
    total = sizes.sum()
    if total <= 0:
        raise ValueError("aggregation weights sum to zero")
    stacked = np.stack(params_list)
    return (sizes / total) @ stacked


def accuracy(params: np.ndarray, features: np.ndarray, labels: np.ndarray,
             n_classes: int) -> float:
    w, b = _unpack(params, n_classes, features.shape[1])
    pred = np.argmax(features @ w.T + b, axis=1)
    return float(np.mean(pred == labels))


@dataclass
class FlRoundLog:
    round: int
    participants: list[int]
    accuracy: float
    max_accuracy: float
    round_latency: float
    wall_clock: float


@dataclass
class FlSetup:
    """Everything an FL run needs besides the scheme."""

    geometry: NetworkGeometry
    clients: list[ClientProfile]
    datasets: list[LocalDataset]
    test_x: np.ndarray
    test_y: np.ndarray
    n_classes: int
    n_select: int
    n_conventional: int
    lr: float = 0.1
    classifier: FuzzyClassifier | None = None
    fading: bool = False


def build_setup(geo: NetworkGeometry, clients: list[ClientProfile], *, total_samples: int,
                n_classes: int, n_features: int, skew: float, seed: int, n_select: int,
                n_conventional: int, lr: float = 0.1, test_samples: int = 2000,
                classifier: FuzzyClassifier | None = None, fading: bool = False,
                dc_rate: float | None = None) -> FlSetup:
    """Partition data over ``clients`` and resize their profiles to match.

    The data-contribution rate defaults to 3 / max(D_n) of the new sizes.
    """
    rng = np.random.default_rng(seed)
    task = make_task(n_classes, n_features, seed=int(rng.integers(2 ** 31)))
    datasets = partition_noniid(total_samples, n_classes, len(clients), skew,
                                int(rng.integers(2 ** 31)), task)
    sizes = [len(d) for d in datasets]
    rate = dc_rate if dc_rate is not None else 3.0 / max(sizes)
    resized = [replace(c, dataset_size=s, dc_rate=rate) for c, s in zip(clients, sizes)]
    test_y = np.arange(test_samples) % n_classes
    test_x = task.sample(test_y, np.random.default_rng(int(rng.integers(2 ** 31))))
    return FlSetup(geo, resized, datasets, test_x, test_y, n_classes, n_select,
                   n_conventional, lr, classifier, fading)


RoundSolver = Callable[[RoundInstance, BaselineKind], BaselineOutcome]


def run_fl(setup: FlSetup, kind: BaselineKind, rounds: int, solver: RoundSolver,
           seed: int = 0) -> list[FlRoundLog]:
    """Simulate ``rounds`` FL rounds under one antenna scheme.

    Without fading the participants and the round latency are fixed, so the
    instance is solved once. With fading, gains are redrawn, clients are
    re-classified and the round is re-solved every round.
    """
    rng = np.random.default_rng(seed)
    geo = setup.geometry
    n_features = setup.datasets[0].features.shape[1]
    params = init_params(setup.n_classes, n_features)
    logs: list[FlRoundLog] = []
    clock = 0.0
    best_acc = 0.0
    cached = None
    for t in range(rounds):
        if setup.fading or cached is None:
            fading = ({c.id: float(rng.exponential(1.0)) for c in setup.clients}
                      if setup.fading else {})
            gains = [conventional_gain(c, geo, fading.get(c.id)) for c in setup.clients]
            selection, _ = classify_and_select(setup.clients, gains, setup.n_select,
                                               setup.n_conventional, setup.classifier)
            selection = Selection(sorted(selection.conventional), sorted(selection.pinching),
                                  sorted(selection.discarded))
            instance = make_instance(setup.clients, selection, geo, kind, fading=fading)
            outcome = solver(instance, kind)
            cached = (selection, outcome.round_latency)
        selection, latency = cached
        ids = selection.selected
        local = [local_sgd_step(params, setup.datasets[i], setup.lr, setup.n_classes)
                 for i in ids]
        params = aggregate(local, [len(setup.datasets[i]) for i in ids])
        acc = accuracy(params, setup.test_x, setup.test_y, setup.n_classes)
        best_acc = max(best_acc, acc)
        clock += latency
        logs.append(FlRoundLog(t, list(ids), acc, best_acc, latency, clock))
    return logs


def accuracy_at_budget(logs: list[FlRoundLog], budget: float) -> float:
    """Best accuracy reached by rounds finishing within ``budget`` seconds."""
    reached = [l.max_accuracy for l in logs if l.wall_clock <= budget * (1 + 1e-12)]
    return reached[-1] if reached else 0.0


def write_fl_csv(path: str | Path, logs: list[FlRoundLog], scheme: str, seed: int,
                 append: bool = False) -> None:
    """Write (or append, without header) one scheme's round logs."""
    with open(path, "a" if append else "w", encoding="utf-8", newline="") as fh:
        if not append:
            fh.write("round,wall_clock_s,round_T_s,accuracy,max_accuracy,scheme,seed\n")
        for l in logs:
            fh.write(f"{l.round},{l.wall_clock!r},{l.round_latency!r},{l.accuracy!r},"
                     f"{l.max_accuracy!r},{scheme},{seed}\n")
