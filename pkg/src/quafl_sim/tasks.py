"""Client objectives with stochastic-gradient oracles.

Two families are provided. Heterogeneous quadratics ``f_i(x) = 0.5||x - c_i||^2``
have closed-form smoothness, variance and dissimilarity constants. Logistic
regression on two Gaussian blobs gives a non-trivial classification task with
a label-skew heterogeneity dial.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit, log_expit


@dataclass(frozen=True)
class AnalyticConstants:
    sigma: float
    G: float
    B: float
    L: float
    f_star: float


@dataclass(frozen=True)
class Evaluation:
    loss: float
    accuracy: Optional[float]  # None when accuracy is not defined for the task
    grad_norm_sq: float


class TaskSet:
    """Base class; ``n`` client objectives on ``R^d`` with a global mean loss."""

    kind = "abstract"

    def __init__(self, n: int, d: int):
        self.n = n
        self.d = d

    def client_loss(self, i: int, x) -> float:
        raise NotImplementedError

    def client_grad(self, i: int, x) -> np.ndarray:
        raise NotImplementedError

    def stochastic_grad(self, i: int, x, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def full_stochastic_grad(self, x, rng: np.random.Generator) -> np.ndarray:
        """Mini-batch gradient of the global objective (sequential baseline)."""
        raise NotImplementedError

    def loss(self, x) -> float:
        return float(np.mean([self.client_loss(i, x) for i in range(self.n)]))

    def grad(self, x) -> np.ndarray:
        return np.mean([self.client_grad(i, x) for i in range(self.n)], axis=0)

    def evaluate(self, x, split: str = "train") -> Evaluation:
        g = self.grad(x)
        return Evaluation(self.loss(x), None, float(g @ g))


class QuadraticTask(TaskSet):
    kind = "quadratic"

    def __init__(self, centers: np.ndarray, noise_sigma: float):
        centers = np.asarray(centers, dtype=np.float64)
        super().__init__(*centers.shape)
        self.centers = centers
        self.noise_sigma = float(noise_sigma)
        self.optimum = centers.mean(axis=0)
        self._spread_sq = float(np.sum((centers - self.optimum) ** 2) / self.n)

    def client_loss(self, i, x):
        r = x - self.centers[i]
        return 0.5 * float(r @ r)

    def client_grad(self, i, x):
        return x - self.centers[i]

    def stochastic_grad(self, i, x, rng):
        g = x - self.centers[i]
        if self.noise_sigma:
            g += self.noise_sigma * rng.standard_normal(self.d)
        return g

    def full_stochastic_grad(self, x, rng):
        g = x - self.optimum
        if self.noise_sigma:
            g += self.noise_sigma * rng.standard_normal(self.d)
        return g

    # closed forms; identical to the client averages by construction
    def loss(self, x):
        r = np.asarray(x) - self.optimum
        return 0.5 * float(r @ r) + 0.5 * self._spread_sq

    def grad(self, x):
        return np.asarray(x) - self.optimum


def make_quadratic(
    n: int, d: int, spread: float = 1.0, noise_sigma: float = 0.0, seed=0, offset: float = 0.0
) -> QuadraticTask:
    """Centers uniform in ``offset + [-spread, spread]^d``.

    A nonzero ``offset`` moves the optimum away from the all-zero starting
    model, which gives runs an optimization transient to measure.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    if spread < 0 or noise_sigma < 0:
        raise ValueError("spread and noise_sigma must be nonnegative")
    rng = np.random.default_rng(seed)
    centers = offset + rng.uniform(-spread, spread, size=(n, d))
    return QuadraticTask(centers, noise_sigma)


def analytic_constants(task: TaskSet) -> AnalyticConstants:
    if not isinstance(task, QuadraticTask):
        raise TypeError(f"closed-form constants need a quadratic task, got {task.kind!r}")
    return AnalyticConstants(
        sigma=task.noise_sigma * np.sqrt(task.d),
        G=float(np.sqrt(task._spread_sq)),
        B=1.0,
        L=1.0,
        f_star=task.loss(task.optimum),
    )


class LogisticTask(TaskSet):
    """Binary cross-entropy, no bias term; labels are stored as +-1."""

    kind = "logistic"

    def __init__(self, features, labels, client_ids, test_features, test_labels, batch: int = 10):
        super().__init__(int(client_ids.max()) + 1, features.shape[1])
        self.features = features
        self.labels = labels
        self.client_ids = client_ids
        self.test_features = test_features
        self.test_labels = test_labels
        self.batch = batch
        self._shards = [np.flatnonzero(client_ids == i) for i in range(self.n)]
        self._A = [features[idx] for idx in self._shards]
        self._y = [labels[idx] for idx in self._shards]

    @staticmethod
    def _loss(A, y, x):
        return float(-np.mean(log_expit(y * (A @ x))))

    @staticmethod
    def _grad(A, y, x):
        w = -y * expit(-y * (A @ x))
        return A.T @ w / len(y)

    def client_loss(self, i, x):
        return self._loss(self._A[i], self._y[i], x)

    def client_grad(self, i, x):
        return self._grad(self._A[i], self._y[i], x)

    def stochastic_grad(self, i, x, rng):
        A, y = self._A[i], self._y[i]
        if self.batch >= len(y):
            return self._grad(A, y, x)
        idx = rng.choice(len(y), size=self.batch, replace=False)
        return self._grad(A[idx], y[idx], x)

    def full_stochastic_grad(self, x, rng):
        if self.batch >= len(self.labels):
            return self._grad(self.features, self.labels, x)
        idx = rng.choice(len(self.labels), size=self.batch, replace=False)
        return self._grad(self.features[idx], self.labels[idx], x)

    def smoothness_estimate(self) -> float:
        """Upper bound on every client's gradient Lipschitz constant."""
        return max(float(np.linalg.eigvalsh(A.T @ A / len(A))[-1]) / 4 for A in self._A)

    def evaluate(self, x, split="train"):
        if split == "train":
            A, y = self.features, self.labels
        elif split == "test":
            A, y = self.test_features, self.test_labels
        else:
            raise ValueError(f"split must be 'train' or 'test', got {split!r}")
        margins = y * (A @ x)
        g = self._grad(A, y, x)
        return Evaluation(
            loss=float(-np.mean(log_expit(margins))),
            accuracy=float(np.mean(margins > 0)),
            grad_norm_sq=float(g @ g),
        )

    def dump_csv(self, path) -> None:
        """One row per sample: features, label (0/1), client id (-1 for test)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{j}" for j in range(self.d)] + ["label", "client_id"])
            for a, y, c in zip(self.features, self.labels, self.client_ids):
                w.writerow([repr(float(v)) for v in a] + [int(y > 0), int(c)])
            for a, y in zip(self.test_features, self.test_labels):
                w.writerow([repr(float(v)) for v in a] + [int(y > 0), -1])

    @classmethod
    def load_csv(cls, path, batch: int = 10) -> "LogisticTask":
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        feats, labels, cid = rows[:, :-2], 2.0 * rows[:, -2] - 1.0, rows[:, -1].astype(int)
        train = cid >= 0
        return cls(feats[train], labels[train], cid[train], feats[~train], labels[~train], batch=batch)


def make_logistic(
    n: int,
    d: int,
    samples_per_client: int = 50,
    skew: float = 0.0,
    seed=0,
    batch: int = 10,
    separation: float = 2.0,
    test_samples: int = 500,
) -> LogisticTask:
    """Two Gaussian blobs at ``+-separation * u`` for a random unit ``u``.

    Client ``i`` holds a class-1 fraction of ``0.5 * (1 - skew) + skew * (i % 2)``,
    so ``skew=0`` is an i.i.d. split and ``skew=1`` gives single-class clients.
    """
    if samples_per_client < 1:
        raise ValueError("samples_per_client must be >= 1")
    if not 0.0 <= skew <= 1.0:
        raise ValueError("skew must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(d)
    u /= np.linalg.norm(u)
    mean = separation * u

    def draw(labels):
        return labels[:, None] * mean + rng.standard_normal((len(labels), d))

    labels, cids = [], []
    for i in range(n):
        frac = 0.5 * (1 - skew) + skew * (i % 2)
        n_pos = int(round(frac * samples_per_client))
        y = np.r_[np.ones(n_pos), -np.ones(samples_per_client - n_pos)]
        labels.append(y)
        cids.append(np.full(samples_per_client, i))
    labels = np.concatenate(labels)
    client_ids = np.concatenate(cids)
    features = draw(labels)
    test_labels = np.where(rng.random(test_samples) < 0.5, 1.0, -1.0)
    return LogisticTask(features, labels, client_ids, draw(test_labels), test_labels, batch=batch)


def loss_and_accuracy(task: TaskSet, x, split: str = "train") -> Evaluation:
    return task.evaluate(np.asarray(x, dtype=np.float64), split)
