"""Discrete-event timing engine.

Clients run their local steps on their own clocks. The server contacts a
random subset every ``sit + swt`` time units (QuAFL), or waits for the
slowest sampled client each round (FedAvg). A contacted client that is in
the middle of a step finishes that step and then answers; an idle client
answers at once. The interaction window lasts ``sit``: a step still in
flight when it closes is completed at the close.
"""
from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import fedcore
from .config import RunConfig
from .diagnostics import PotentialRecord, PotentialTracker

CLIENT_STEP = "client_step_complete"
CONTACT_BEGIN = "server_contact_begin"
CONTACT_END = "server_contact_end"
_PRIORITY = {CLIENT_STEP: 0, CONTACT_BEGIN: 1, CONTACT_END: 2}


@dataclass
class SimEvent:
    time: float
    kind: str
    client: int = -1
    payload: object = None


@dataclass
class TraceRecord:
    t: int
    sim_time: float
    total_local_steps: int
    train_loss: float
    accuracy: Optional[float]
    grad_norm_mu_sq: float
    grad_norm_server_sq: float
    phi: float
    cum_bits: int
    empirical_H: float
    decode_failures: int


@dataclass
class SimTrace:
    run_id: str
    algo: str
    seed: int
    records: list = field(default_factory=list)
    potentials: list = field(default_factory=list)  # one per round start, plus the final state
    sent_h_sums: list = field(default_factory=list)  # sum of replied accumulators, per round
    zero_step_fraction: float = 0.0
    slow_clients: tuple = ()


class Simulator:
    """Single-run simulator state; drive it with :meth:`advance` or :meth:`run`."""

    def __init__(self, config: RunConfig, task, algo: Optional[str] = None, seed: int = 0):
        config.validate()
        self.config = config
        self.algo = algo or config.algo
        self.task = task
        self.seed = seed
        self.n, self.s, self.K = config.n, config.s, config.K
        if task.n != self.n:
            raise ValueError(f"task has {task.n} clients, config has n={self.n}")
        self.eta, self.codec = config.resolve(task)
        self.strict = config.failure_mode == "strict"

        streams = np.random.SeedSequence(seed).spawn(4)
        self.sample_rng = np.random.default_rng(streams[0])
        self.quant_rng = np.random.default_rng(streams[1])
        timing_root = np.random.default_rng(streams[2])
        self.timing_rngs = [np.random.default_rng(c) for c in streams[2].spawn(self.n + 1)]
        self.grad_rngs = [np.random.default_rng(c) for c in streams[3].spawn(self.n + 1)]

        tp = config.timing
        n_slow = int(math.floor(tp.slow_fraction * self.n))
        self.slow_clients = tuple(sorted(int(i) for i in timing_root.permutation(self.n)[:n_slow]))
        slow = set(self.slow_clients)
        if tp.kind == "exponential":
            self._means = [1 / tp.slow_rate if i in slow else 1 / tp.fast_rate for i in range(self.n)]
        else:
            self._means = [tp.duration] * self.n
        self._means.append(tp.slow_mean())  # the baseline node is a slow node
        self._exponential = tp.kind == "exponential"

        d = task.d
        self.server = fedcore.ServerState.initial(d)
        self.clients = [fedcore.ClientState.initial(d, self.K) for _ in range(self.n)]
        self.baseline = fedcore.BaselineState(np.zeros(d))
        self.tracker = PotentialTracker(self.server.X, [c.X for c in self.clients])

        self.now = 0.0
        self.total_local_steps = 0
        self._queue = []
        self._seq = itertools.count()
        self._busy_since = [None] * self.n  # start time of the in-flight step
        self._generation = [0] * self.n
        self._pending = set()
        self._selected = ()
        self._decoded = {}
        self._round_h = None
        self._contacts = 0
        self._contact_steps = 0
        self._zero_contacts = 0
        self.done = False

        self.trace = SimTrace(config.run_id(seed), self.algo, seed, slow_clients=self.slow_clients)
        self._record()
        self._stop_if_budget_reached()
        if self.done:
            self._close_potentials()
        else:
            self._schedule_start()

    # --- scheduling helpers ---------------------------------------------

    def _push(self, time, kind, client=-1, payload=None):
        heapq.heappush(self._queue, (time, _PRIORITY[kind], client, next(self._seq), kind, payload))

    def _duration(self, i: int) -> float:
        if self._exponential:
            return float(self.timing_rngs[i].exponential(self._means[i]))
        return self._means[i]

    def _start_step(self, i: int):
        self._busy_since[i] = self.now
        self._generation[i] += 1
        self._push(self.now + self._duration(i), CLIENT_STEP, i, self._generation[i])

    def _schedule_start(self):
        if self.algo == "quafl":
            for i in range(self.n):
                self._start_step(i)
            self._push(self.config.swt, CONTACT_BEGIN)
        elif self.algo == "fedavg":
            self._push(0.0, CONTACT_BEGIN)
        else:
            self._push(self._duration(self.n), CLIENT_STEP, self.n)

    def _stop_if_budget_reached(self):
        T = self.config.T
        t = self.baseline.t if self.algo == "baseline" else self.server.t
        if T is not None and t >= T:
            self.done = True

    # --- metrics ----------------------------------------------------------

    def _potential(self) -> PotentialRecord:
        mu = self.tracker.mu
        H = np.array([c.h for c in self.clients])
        gm = self.task.grad(mu)
        gs = self.task.grad(self.server.X)
        return PotentialRecord(
            t=self.server.t,
            phi=self.tracker.phi,
            mu=mu,
            grad_norm_mu_sq=float(gm @ gm),
            grad_norm_server_sq=float(gs @ gs),
            sum_h_sq=float(np.einsum("ij,ij->", H, H)),
        )

    def _record(self):
        if self.algo == "baseline":
            x, t, phi, mu = self.baseline.X, self.baseline.t, 0.0, self.baseline.X
        else:
            x, t, phi, mu = self.server.X, self.server.t, self.tracker.phi, self.tracker.mu
        ev = self.task.evaluate(x)
        gm = self.task.grad(mu)
        self.trace.records.append(
            TraceRecord(
                t=t,
                sim_time=self.now,
                total_local_steps=self.total_local_steps,
                train_loss=ev.loss,
                accuracy=ev.accuracy,
                grad_norm_mu_sq=float(gm @ gm),
                grad_norm_server_sq=ev.grad_norm_sq,
                phi=phi,
                cum_bits=self.server.cumulative_bits,
                empirical_H=self._contact_steps / self._contacts if self._contacts else 0.0,
                decode_failures=self.server.decode_failures,
            )
        )

    # --- protocol glue ------------------------------------------------------

    def _interact(self, ids):
        """Exchanges with the clients in ``ids``, all answering at this instant."""
        cs = [self.clients[i] for i in ids]
        old = [c.X for c in cs]
        for c in cs:
            self._contacts += 1
            self._contact_steps += c.q
            self._zero_contacts += c.q == 0
            self._round_h += c.h
        decoded = fedcore.server_exchange_many(self.server, cs, self.codec, self.s, self.eta, self.quant_rng, self.strict)
        self.tracker.replace_many(old, [c.X for c in cs])
        for i, row in zip(ids, decoded):
            self._decoded[i] = row
            self._start_step(i)

    def _finish_quafl_round(self):
        old = self.server.X
        fedcore.server_aggregate(self.server, [self._decoded[i] for i in self._selected], self.s)
        self.tracker.replace(old, self.server.X)
        self.trace.sent_h_sums.append(self._round_h)
        self._decoded = {}
        self._after_round()
        if not self.done:
            self._push(self.now + self.config.swt, CONTACT_BEGIN)

    def _after_round(self):
        self._record()
        self._stop_if_budget_reached()
        if self.done:
            self._close_potentials()

    def _close_potentials(self):
        if self.algo != "baseline":
            self.trace.potentials.append(self._potential())

    # --- event handlers -------------------------------------------------------

    def _on_client_step(self, ev: SimEvent):
        i = ev.client
        if self.algo == "baseline":
            fedcore.sequential_baseline_step(self.baseline, self.task, self.eta, self.grad_rngs[self.n])
            self.total_local_steps += 1
            self._record()
            self._stop_if_budget_reached()
            if not self.done:
                self._push(self.now + self._duration(self.n), CLIENT_STEP, self.n)
            return
        if ev.payload != self._generation[i]:
            return  # step cancelled by a contact that arrived as it started
        c = self.clients[i]
        fedcore.local_step(c, self.task, self.eta, i, self.grad_rngs[i])
        self.total_local_steps += 1
        self._busy_since[i] = None
        if self.algo == "fedavg":
            if c.q < self.K:
                self._start_step(i)
            else:
                self._pending.discard(i)
                if not self._pending:
                    self._push(self.now + self.config.sit, CONTACT_END)
            return
        if i in self._pending:
            self._pending.discard(i)
            self._interact([i])
        elif c.q < self.K:
            self._start_step(i)

    def _on_contact_begin(self, ev: SimEvent):
        self.trace.potentials.append(self._potential())
        self._selected = [int(i) for i in fedcore.sample_clients(self.n, self.s, self.sample_rng)]
        if self.algo == "fedavg":
            for i in self._selected:
                old = self.clients[i].X
                fedcore.fedavg_begin(self.server, self.clients[i])
                self.tracker.replace(old, self.clients[i].X)
            self._pending = set(self._selected)
            self._round_h = np.zeros(self.task.d)
            for i in self._selected:
                self._start_step(i)
            return
        self._round_h = np.zeros(self.task.d)
        ready = []
        for i in self._selected:
            started = self._busy_since[i]
            if started is not None and started < self.now:
                self._pending.add(i)
                continue
            if started is not None:  # step began at this instant; nothing computed yet
                self._generation[i] += 1
                self._busy_since[i] = None
            ready.append(i)
        if ready:
            self._interact(ready)
        self._push(self.now + self.config.sit, CONTACT_END)

    def _on_contact_end(self, ev: SimEvent):
        if self.algo == "fedavg":
            for i in self._selected:
                self._round_h += self.clients[i].h
            old = [self.clients[i].X for i in self._selected]
            old_server = self.server.X
            fedcore.fedavg_aggregate(
                self.server, self.clients, self._selected, self.eta, self.codec.message_bits()
            )
            for i, o in zip(self._selected, old):
                self.tracker.replace(o, self.clients[i].X)
            self.tracker.replace(old_server, self.server.X)
            for i in self._selected:
                self._contacts += 1
                self._contact_steps += self.K
            self.trace.sent_h_sums.append(self._round_h)
            self._after_round()
            if not self.done:
                self._push(self.now, CONTACT_BEGIN)
            return
        late = sorted(self._pending)
        for i in late:
            # the interaction window closes: the in-flight step completes now
            self._generation[i] += 1
            self._busy_since[i] = None
            fedcore.local_step(self.clients[i], self.task, self.eta, i, self.grad_rngs[i])
            self.total_local_steps += 1
        if late:
            self._interact(late)
        self._pending = set()
        self._finish_quafl_round()

    # --- public API -----------------------------------------------------------

    def advance(self) -> Optional[SimEvent]:
        """Process the earliest event; returns None once the run is over."""
        if self.done:
            return None
        if not self._queue or (self.config.horizon is not None and self._queue[0][0] > self.config.horizon):
            self.done = True
            self._close_potentials()
            return None
        time, _, client, _, kind, payload = heapq.heappop(self._queue)
        ev = SimEvent(time, kind, client, payload)
        self.now = time
        if ev.kind == CLIENT_STEP:
            self._on_client_step(ev)
        elif ev.kind == CONTACT_BEGIN:
            self._on_contact_begin(ev)
        else:
            self._on_contact_end(ev)
        return ev

    def run(self) -> SimTrace:
        while self.advance() is not None:
            pass
        self.trace.zero_step_fraction = self._zero_contacts / self._contacts if self._contacts else 0.0
        return self.trace


def build_schedule(config: RunConfig, task=None, algo: Optional[str] = None, seed: Optional[int] = None) -> Simulator:
    if task is None:
        task = config.task.build(config.n)
    return Simulator(config, task, algo, config.seeds[0] if seed is None else seed)


def run(config: RunConfig, task=None, algo: Optional[str] = None, seed: Optional[int] = None) -> SimTrace:
    return build_schedule(config, task, algo, seed).run()
