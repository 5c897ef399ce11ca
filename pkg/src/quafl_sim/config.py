"""Run configuration: validation, JSON round-trip and derived parameters."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Union

import numpy as np

from . import quant, tasks

ALGOS = ("quafl", "fedavg", "baseline")
TASK_KINDS = ("quadratic", "logistic")
TIMING_KINDS = ("uniform", "exponential")
FAILURE_MODES = ("record", "strict")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass
class TimingProfile:
    kind: str = "uniform"
    duration: float = 1.0  # uniform: every local step takes this long
    fast_rate: float = 0.5  # exponential: step duration ~ Exp(rate)
    slow_rate: float = 0.125
    slow_fraction: float = 0.0

    def validate(self, prefix="timing"):
        if self.kind not in TIMING_KINDS:
            raise ConfigError(f"{prefix}.kind", f"must be one of {TIMING_KINDS}, got {self.kind!r}")
        for name in ("duration", "fast_rate", "slow_rate"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"{prefix}.{name}", f"must be a positive number, got {v!r}")
        if not 0.0 <= self.slow_fraction <= 1.0:
            raise ConfigError(f"{prefix}.slow_fraction", "must lie in [0, 1]")

    def slow_mean(self) -> float:
        return 1.0 / self.slow_rate if self.kind == "exponential" else self.duration


@dataclass
class TaskSpec:
    kind: str = "quadratic"
    d: int = 10
    spread: float = 1.0
    noise_sigma: float = 0.1
    offset: float = 0.0
    samples_per_client: int = 50
    skew: float = 0.0
    batch: int = 10
    seed: int = 0

    def validate(self, prefix="task"):
        if self.kind not in TASK_KINDS:
            raise ConfigError(f"{prefix}.kind", f"must be one of {TASK_KINDS}, got {self.kind!r}")
        for name in ("d", "samples_per_client", "batch"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{prefix}.{name}", f"must be an integer >= 1, got {v!r}")
        if self.spread < 0 or self.noise_sigma < 0:
            raise ConfigError(f"{prefix}.spread" if self.spread < 0 else f"{prefix}.noise_sigma", "must be >= 0")
        if not 0.0 <= self.skew <= 1.0:
            raise ConfigError(f"{prefix}.skew", "must lie in [0, 1]")

    def build(self, n: int) -> tasks.TaskSet:
        if self.kind == "quadratic":
            return tasks.make_quadratic(n, self.d, self.spread, self.noise_sigma, seed=self.seed, offset=self.offset)
        return tasks.make_logistic(
            n, self.d, self.samples_per_client, self.skew, seed=self.seed, batch=self.batch
        )


@dataclass
class RunConfig:
    algo: str = "quafl"
    n: int = 16
    s: int = 4
    K: int = 5
    b: Union[int, str] = 16  # bits per coordinate, or "lossless"
    quant_window: float = 16.0  # modular window W; spacing = W / 2**b
    eta: Union[float, str] = 0.05  # or "theorem"
    T: Optional[int] = 300
    horizon: Optional[float] = None  # simulated-time budget
    swt: float = 5.0
    sit: float = 1.0
    timing: TimingProfile = field(default_factory=TimingProfile)
    task: TaskSpec = field(default_factory=TaskSpec)
    seeds: list = field(default_factory=lambda: [0])
    failure_mode: str = "record"

    def validate(self) -> "RunConfig":
        if self.algo not in ALGOS:
            raise ConfigError("algo", f"must be one of {ALGOS}, got {self.algo!r}")
        for name in ("n", "s", "K"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(name, f"must be an integer >= 1, got {v!r}")
        if self.s > self.n:
            raise ConfigError("s", f"s exceeds n ({self.s} > {self.n})")
        if self.b != "lossless" and (not isinstance(self.b, int) or isinstance(self.b, bool) or not 1 <= self.b <= 32):
            raise ConfigError("b", f"must be an integer in [1, 32] or 'lossless', got {self.b!r}")
        if not self.quant_window > 0:
            raise ConfigError("quant_window", "must be positive")
        if self.eta == "theorem":
            if self.T is None:
                raise ConfigError("eta", "'theorem' needs a server-step budget T")
            if self.task.kind != "quadratic":
                raise ConfigError("eta", "'theorem' needs closed-form constants (quadratic task)")
        elif not (isinstance(self.eta, (int, float)) and not isinstance(self.eta, bool) and self.eta >= 0):
            raise ConfigError("eta", f"must be a nonnegative number or 'theorem', got {self.eta!r}")
        if self.T is None and self.horizon is None:
            raise ConfigError("T", "either T or horizon must be given")
        if self.T is not None and (not isinstance(self.T, int) or self.T < 0):
            raise ConfigError("T", f"must be an integer >= 0, got {self.T!r}")
        if self.horizon is not None and not self.horizon >= 0:
            raise ConfigError("horizon", "must be >= 0")
        for name in ("swt", "sit"):
            if not getattr(self, name) >= 0:
                raise ConfigError(name, "must be >= 0")
        if self.T is None and self.algo == "quafl" and self.swt + self.sit == 0:
            raise ConfigError("T", "rounds take zero simulated time; a horizon alone never ends the run")
        if not self.seeds or not all(isinstance(x, int) and x >= 0 for x in self.seeds):
            raise ConfigError("seeds", "must be a nonempty list of nonnegative integers")
        if self.failure_mode not in FAILURE_MODES:
            raise ConfigError("failure_mode", f"must be one of {FAILURE_MODES}")
        self.timing.validate()
        self.task.validate()
        return self

    # --- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        sub = {}
        for name, typ in (("timing", TimingProfile), ("task", TaskSpec)):
            raw = data.pop(name, {})
            if isinstance(raw, str):
                raw = {"kind": raw}
            if not isinstance(raw, dict):
                raise ConfigError(name, f"must be an object or a kind name, got {raw!r}")
            sub[name] = _build(typ, raw, name)
        cfg = _build(cls, data, "")
        cfg.timing, cfg.task = sub["timing"], sub["task"]
        cfg.seeds = list(cfg.seeds)
        return cfg.validate()

    def run_id(self, seed: int) -> str:
        """Readable, deterministic identifier; the digest covers every other field."""
        b = self.b if self.b == "lossless" else f"b{self.b}"
        body = self.to_dict()
        body.pop("seeds")
        digest = hashlib.sha1(json.dumps(body, sort_keys=True).encode()).hexdigest()[:8]
        return f"{self.algo}_n{self.n}_s{self.s}_K{self.K}_{b}_{self.task.kind}_{digest}_seed{seed}"

    # --- derived parameters ---------------------------------------------

    def resolve(self, task: tasks.TaskSet):
        """Learning rate and codec for this run (theorem mode is resolved here)."""
        d = task.d
        if self.eta == "theorem":
            c = tasks.analytic_constants(task)
            f0_gap = task.loss(np.zeros(d)) - c.f_star
            params = quant.theorem_params(self.T, self.n, d, self.K, c.sigma, c.G, c.L, f0_gap)
            eta, spacing = params.eta, params.gamma_q
        else:
            eta, spacing = float(self.eta), self.quant_window / 2**self.b if self.b != "lossless" else None
        if self.b == "lossless" or self.algo == "fedavg":
            return eta, quant.lossless_codec(d)
        return eta, quant.LatticeCodec(quant.make_grid(self.b, spacing, d))


def _build(typ, raw: dict, prefix: str):
    known = {f.name for f in fields(typ)}
    unknown = sorted(set(raw) - known)
    if unknown:
        path = f"{prefix}.{unknown[0]}" if prefix else unknown[0]
        raise ConfigError(path, "unknown key")
    return typ(**raw)
