"""Protocol state machines: QuAFL, synchronous FedAvg and the sequential baseline.

Nothing here knows about time. The event loop in :mod:`quafl_sim.simclock`
decides *when* each transition fires. Transitions update the passed state
in place and return it, so callers may treat them as state-in/state-out.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .quant import QuantizationFailure


class ProtocolError(RuntimeError):
    pass


@dataclass
class ServerState:
    X: np.ndarray
    t: int = 0
    cumulative_bits: int = 0
    decode_failures: int = 0

    @classmethod
    def initial(cls, d: int) -> "ServerState":
        return cls(X=np.zeros(d))


@dataclass
class ClientState:
    X: np.ndarray
    h: np.ndarray
    K: int
    q: int = 0
    steps_at_last_contact: list = field(default_factory=list)

    @classmethod
    def initial(cls, d: int, K: int) -> "ClientState":
        return cls(X=np.zeros(d), h=np.zeros(d), K=K)

    def progress(self, eta: float) -> np.ndarray:
        """Current local iterate ``X - eta * h``."""
        return self.X - eta * self.h


@dataclass
class BaselineState:
    X: np.ndarray
    t: int = 0


def sample_clients(n: int, s: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform size-``s`` subset of ``range(n)``, in increasing order."""
    if not 1 <= s <= n:
        raise ValueError(f"need 1 <= s <= n, got s={s}, n={n}")
    return np.sort(rng.choice(n, size=s, replace=False))


def local_step(client: ClientState, task, eta: float, i: int, rng) -> ClientState:
    if client.q >= client.K:
        raise ProtocolError(f"client {i} already took K={client.K} local steps")
    client.h += task.stochastic_grad(i, client.X - eta * client.h, rng)
    client.q += 1
    return client


def client_interact(client: ClientState, incoming, codec, s: int, eta: float, rng, strict: bool = False, t: int = -1):
    """Reply with the current progress, then average in the server model.

    Returns ``(reply, client, failed)`` where ``failed`` flags a wrong
    decode of the server message (keyed on the client's old base model).
    """
    progress = client.X - eta * client.h
    reply = codec.encode(progress, rng)
    server_model, failed = codec.decode_with_oracle(client.X, incoming)
    if failed and strict:
        raise QuantizationFailure(t, "client")
    client.X = (server_model + s * progress) / (s + 1)
    client.h = np.zeros_like(client.h)
    client.steps_at_last_contact.append(client.q)
    client.q = 0
    return reply, client, failed


def server_exchange(server: ServerState, client: ClientState, codec, s: int, eta: float, rng, strict: bool = False):
    """One send/receive pair between the server and a sampled client.

    Returns the server-side decode of the client's reply.
    """
    outgoing = codec.encode(server.X, rng)
    reply, _, client_failed = client_interact(client, outgoing, codec, s, eta, rng, strict, server.t)
    decoded, server_failed = codec.decode_with_oracle(server.X, reply)
    if server_failed and strict:
        raise QuantizationFailure(server.t, "server")
    server.decode_failures += int(client_failed) + int(server_failed)
    server.cumulative_bits += outgoing.bit_len + reply.bit_len
    return decoded


def server_exchange_many(server: ServerState, clients: list, codec, s: int, eta: float, rng, strict: bool = False):
    """``server_exchange`` for several clients contacted at the same instant.

    The arithmetic is that of :func:`client_interact`, done on stacked rows so
    a round costs a handful of array operations instead of a few per client.
    Returns the server-side decodes, one row per client.
    """
    m, d = len(clients), server.X.shape[0]
    X = np.array([c.X for c in clients])
    progress = X - eta * np.array([c.h for c in clients])
    server_rows = np.broadcast_to(server.X, (m, d))
    # rows 0..m-1: server -> clients, keyed on each client's old model;
    # rows m..2m-1: clients -> server, keyed on X_t
    out, failed = codec.transmit_rows(np.vstack([server_rows, progress]), np.vstack([X, server_rows]), rng)
    server_model, decoded = out[:m], out[m:]
    client_failed, server_failed = failed[:m], failed[m:]
    if strict and client_failed.any():
        raise QuantizationFailure(server.t, "client")
    if strict and server_failed.any():
        raise QuantizationFailure(server.t, "server")
    new_X = server_model
    new_X += s * progress
    new_X /= s + 1
    for c, x in zip(clients, new_X):
        c.X = x
        c.h = np.zeros(d)
        c.steps_at_last_contact.append(c.q)
        c.q = 0
    server.decode_failures += int(client_failed.sum()) + int(server_failed.sum())
    server.cumulative_bits += 2 * m * codec.message_bits(d)
    return decoded


def server_aggregate(server: ServerState, decoded: list, s: int) -> ServerState:
    server.X = (server.X + np.sum(decoded, axis=0)) / (s + 1)
    server.t += 1
    return server


def server_round(server: ServerState, clients: list, codec, s: int, eta: float, rng, selected=None, strict=False):
    """A full QuAFL round in which every sampled client answers at once."""
    if selected is None:
        selected = sample_clients(len(clients), s, rng)
    decoded = server_exchange_many(server, [clients[i] for i in selected], codec, s, eta, rng, strict)
    return server_aggregate(server, decoded, s)


def fedavg_begin(server: ServerState, client: ClientState) -> ClientState:
    client.X = server.X.copy()
    client.h = np.zeros_like(client.h)
    client.q = 0
    return client


def fedavg_aggregate(server: ServerState, clients: list, selected, eta: float, message_bits: int) -> ServerState:
    results = []
    for i in selected:
        c = clients[i]
        c.steps_at_last_contact.append(c.q)
        c.X = c.X - eta * c.h
        c.h = np.zeros_like(c.h)
        results.append(c.X)
    server.X = np.mean(results, axis=0)
    server.cumulative_bits += 2 * len(selected) * message_bits
    server.t += 1
    return server


def fedavg_round(server, clients, s, K, eta, task, rng, selected=None, message_bits=0):
    """Synchronous round: ``K`` uninterrupted local steps from the server model."""
    if selected is None:
        selected = sample_clients(len(clients), s, rng)
    for i in selected:
        c = fedavg_begin(server, clients[i])
        c.K = K
        for _ in range(K):
            local_step(c, task, eta, int(i), rng)
    return fedavg_aggregate(server, clients, selected, eta, message_bits)


def sequential_baseline_step(state: BaselineState, task, eta: float, rng) -> BaselineState:
    state.X = state.X - eta * task.full_stochastic_grad(state.X, rng)
    state.t += 1
    return state
