"""Named scenario grids; desk-scale analogues of the usual sweep figures."""
from __future__ import annotations

import copy
from dataclasses import dataclass

from ..config import RunConfig, TaskSpec, TimingProfile

FIVE_SEEDS = [0, 1, 2, 3, 4]


@dataclass(frozen=True)
class Preset:
    name: str
    description: str
    builder: object

    def configs(self) -> list:
        return [c.validate() for c in self.builder()]


def _quadratic_base(**over) -> RunConfig:
    # offset moves the optimum away from the zero start so runs have a transient
    task = TaskSpec(kind="quadratic", d=10, spread=1.0, noise_sigma=0.1, offset=2.0)
    cfg = RunConfig(algo="quafl", n=32, s=4, K=5, b=16, eta=0.005, T=300, swt=20.0, sit=1.0,
                    task=task, seeds=list(FIVE_SEEDS))
    for k, v in over.items():
        setattr(cfg, k, v)
    return cfg


def _logistic_base(**over) -> RunConfig:
    task = TaskSpec(kind="logistic", d=20, samples_per_client=60, skew=0.5, batch=10)
    cfg = RunConfig(algo="quafl", n=20, s=6, K=9, b=16, eta=0.05, T=200, swt=10.0, sit=1.0,
                    task=task, seeds=list(FIVE_SEEDS))
    for k, v in over.items():
        setattr(cfg, k, v)
    return cfg


def _sweep_K():
    return [_quadratic_base(K=K) for K in (5, 10, 20)]


def _sweep_s():
    return [_quadratic_base(s=s) for s in (4, 8, 16)]


def _sweep_b():
    # low-noise, tight-cluster regime where quantization error is what limits the loss
    task = TaskSpec(kind="quadratic", d=10, spread=0.01, noise_sigma=0.0, offset=1.0)
    return [_quadratic_base(b=b, eta=0.1, quant_window=1024.0, task=copy.deepcopy(task)) for b in (12, 16, 32)]


def _cifar_K():
    return [_logistic_base(K=K) for K in (3, 9, 15)]


def _cifar_s():
    return [_logistic_base(s=s) for s in (3, 6, 10)]


def _timing():
    timing = TimingProfile(kind="exponential", fast_rate=0.5, slow_rate=0.125, slow_fraction=0.25)
    common = dict(T=None, horizon=4000.0, timing=timing)
    return [
        _quadratic_base(algo="quafl", swt=1.0, **copy.deepcopy(common)),
        _quadratic_base(algo="fedavg", swt=0.0, **copy.deepcopy(common)),
        _quadratic_base(algo="baseline", b="lossless", **copy.deepcopy(common)),
    ]


PRESETS = {
    p.name: p
    for p in (
        Preset("sweep-K", "max local steps K in {5,10,20}; quadratic stand-in for the FMNIST K sweep", _sweep_K),
        Preset("sweep-s", "interacting peers s in {4,8,16}; quadratic stand-in for the FMNIST s sweep", _sweep_s),
        Preset("sweep-b", "bits per coordinate b in {12,16,32}; quantization-level sweep", _sweep_b),
        Preset("cifar-K", "K in {3,9,15}; label-skewed logistic stand-in for the CIFAR K sweep", _cifar_K),
        Preset("cifar-s", "s in {3,6,10}; label-skewed logistic stand-in for the CIFAR s sweep", _cifar_s),
        Preset("timing", "QuAFL vs FedAvg vs sequential baseline, exponential timing, 25% slow clients", _timing),
    )
}


def preset(name: str) -> list:
    """Validated configs of the named grid."""
    try:
        return PRESETS[name].configs()
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}") from None
