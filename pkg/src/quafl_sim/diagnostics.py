"""Analysis quantities and ensemble checks of the potential and mean-drift bounds."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass
class PotentialRecord:
    t: int
    phi: float
    mu: np.ndarray
    grad_norm_mu_sq: float
    grad_norm_server_sq: float
    sum_h_sq: float


@dataclass
class CheckReport:
    name: str
    checkpoints: list
    lhs: list
    rhs: list
    passed: list = field(default_factory=list)

    @property
    def pass_fraction(self) -> float:
        return sum(self.passed) / len(self.passed) if self.passed else 0.0

    def __str__(self):
        return f"{self.name}: {sum(self.passed)}/{len(self.passed)} checkpoints pass"


def compute_mu(server_X, client_Xs) -> np.ndarray:
    models = np.vstack([server_X, *client_Xs])
    return models.mean(axis=0)


def compute_phi(server_X, client_Xs, mu) -> float:
    models = np.vstack([server_X, *client_Xs])
    return float(np.sum((models - mu) ** 2))


class PotentialTracker:
    """Running sums over the ``n + 1`` models so that ``phi`` is O(d) per update.

    ``phi = sum_j ||v_j||^2 - ||sum_j v_j||^2 / (n + 1)``.
    """

    def __init__(self, server_X, client_Xs):
        models = [np.asarray(server_X, dtype=np.float64), *client_Xs]
        self.count = len(models)
        self.total = np.sum(models, axis=0)
        self.sq = float(sum(v @ v for v in models))

    def replace(self, old, new) -> None:
        self.total += new - old
        self.sq += float(new @ new) - float(old @ old)

    def replace_many(self, old: list, new: list) -> None:
        for o, v in zip(old, new):
            self.total += v - o
            self.sq += float(v @ v) - float(o @ o)

    @property
    def mu(self) -> np.ndarray:
        return self.total / self.count

    @property
    def phi(self) -> float:
        return max(self.sq - float(self.total @ self.total) / self.count, 0.0)


def _checkpoint_means(runs: Sequence[Sequence[PotentialRecord]], checkpoints):
    phi_now = np.array([[r[c].phi for c in checkpoints] for r in runs]).mean(axis=0)
    phi_next = np.array([[r[c + 1].phi for c in checkpoints] for r in runs]).mean(axis=0)
    h_sq = np.array([[r[c].sum_h_sq for c in checkpoints] for r in runs]).mean(axis=0)
    drift = np.array(
        [[float(np.sum((r[c + 1].mu - r[c].mu) ** 2)) for c in checkpoints] for r in runs]
    ).mean(axis=0)
    return phi_now, phi_next, h_sq, drift


def _validate(runs, checkpoints, min_seeds):
    if len(runs) < min_seeds:
        raise ValueError(f"need at least {min_seeds} seeds for an ensemble check, got {len(runs)}")
    horizon = min(len(r) for r in runs) - 1
    bad = [c for c in checkpoints if not 0 <= c < horizon]
    if bad:
        raise ValueError(f"checkpoints {bad} outside [0, {horizon})")


def check_potential_step(runs, n, s, eta, error_bound, checkpoints, min_seeds=100, rtol=1e-12) -> CheckReport:
    """``E phi_{t+1} <= (1 - 1/4n) E phi_t + 8 s eta^2 sum_i E||h_i||^2 + 16 n eps^2``.

    ``error_bound`` is the codec's hard l2 error per message (0 if lossless).
    """
    _validate(runs, checkpoints, min_seeds)
    phi_now, phi_next, h_sq, _ = _checkpoint_means(runs, checkpoints)
    rhs = (1 - 1 / (4 * n)) * phi_now + 8 * s * eta**2 * h_sq + 16 * n * error_bound**2
    return _report("potential_step", checkpoints, phi_next, rhs, rtol)


def check_mu_drift(runs, n, s, eta, error_bound, checkpoints, min_seeds=100, rtol=1e-12) -> CheckReport:
    """``E||mu_{t+1} - mu_t||^2 <= 2 s^2 eta^2 / (n (n+1)^2) sum_i E||h_i||^2 + 2 eps^2 / (n+1)^2``."""
    _validate(runs, checkpoints, min_seeds)
    _, _, h_sq, drift = _checkpoint_means(runs, checkpoints)
    rhs = 2 * s**2 * eta**2 / (n * (n + 1) ** 2) * h_sq + 2 * error_bound**2 / (n + 1) ** 2
    return _report("mu_drift", checkpoints, drift, rhs, rtol)


def _report(name, checkpoints, lhs, rhs, rtol):
    # rtol absorbs rounding when both sides are (near) zero
    passed = [bool(a <= b * (1 + rtol) + 1e-300) for a, b in zip(lhs, rhs)]
    return CheckReport(name, list(checkpoints), list(map(float, lhs)), list(map(float, rhs)), passed)


def trace_summary(trace) -> dict:
    """Time-averaged gradient norms, final loss, communication and failure totals."""
    recs = trace.records
    # averages run over the iterates mu_0 .. mu_{T-1}
    head = recs[:-1] if len(recs) > 1 else recs
    final = recs[-1]
    T = len(recs) - 1
    return {
        "run_id": trace.run_id,
        "algo": trace.algo,
        "seed": trace.seed,
        "server_steps": T,
        "final_sim_time": final.sim_time,
        "final_loss": final.train_loss,
        "final_accuracy": final.accuracy,
        "avg_grad_norm_mu_sq": float(np.mean([r.grad_norm_mu_sq for r in head])),
        "avg_grad_norm_server_sq": float(np.mean([r.grad_norm_server_sq for r in head])),
        "total_bits": final.cum_bits,
        "bits_per_step": final.cum_bits / T if T else 0.0,
        "total_local_steps": final.total_local_steps,
        "empirical_H": final.empirical_H,
        "zero_step_contact_fraction": trace.zero_step_fraction,
        "decode_failures": final.decode_failures,
    }

