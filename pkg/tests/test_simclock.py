import numpy as np
import pytest

from quafl_sim import RunConfig, Simulator, build_schedule, fedcore, run
from quafl_sim.config import ConfigError, TaskSpec
from quafl_sim.quant import QuantizationFailure
from quafl_sim.simclock import CLIENT_STEP, CONTACT_BEGIN, CONTACT_END


def cfg(**kw):
    base = dict(n=6, s=2, K=3, T=20, swt=2.0, sit=1.0, b=16, eta=0.05)
    base.update(kw)
    return RunConfig.from_dict(base)


def test_first_events_with_zero_waits():
    sim = build_schedule(cfg(swt=0.0, sit=0.0, T=3))
    pending = sorted((t, kind) for t, _, _, _, kind, _ in sim._queue)
    assert pending[0] == (0.0, CONTACT_BEGIN)
    assert pending[1:] == [(1.0, CLIENT_STEP)] * 6
    ev = sim.advance()
    assert (ev.kind, ev.time) == (CONTACT_BEGIN, 0.0)


def test_zero_length_rounds_need_step_budget():
    with pytest.raises(ConfigError):
        cfg(swt=0.0, sit=0.0, T=None, horizon=5.0)


def test_slow_client_count():
    c = cfg(n=20, s=4, timing={"kind": "exponential", "slow_fraction": 0.25})
    sim = build_schedule(c, seed=3)
    assert len(sim.slow_clients) == 5
    assert sim.slow_clients == build_schedule(c, seed=3).slow_clients


def test_exponential_mean_durations():
    c = cfg(n=8, s=2, timing={"kind": "exponential", "fast_rate": 0.5, "slow_rate": 0.125, "slow_fraction": 0.5})
    sim = build_schedule(c, seed=0)
    slow = sim.slow_clients[0]
    fast = next(i for i in range(8) if i not in sim.slow_clients)
    N = 20_000
    assert np.mean([sim._duration(fast) for _ in range(N)]) == pytest.approx(2.0, rel=0.05)
    assert np.mean([sim._duration(slow) for _ in range(N)]) == pytest.approx(8.0, rel=0.05)


def test_mid_step_contact_waits_for_step():
    # steps end at 3.65 and 7.3; the contact arrives at 7.0
    c = cfg(n=1, s=1, K=5, swt=7.0, sit=1.0, T=1, timing={"kind": "uniform", "duration": 3.65})
    sim = build_schedule(c)
    client = sim.clients[0]
    while True:
        ev = sim.advance()
        if ev.kind == CONTACT_BEGIN:
            break
    assert ev.time == 7.0 and client.q == 1 and client.steps_at_last_contact == []
    ev = sim.advance()
    assert (ev.kind, ev.time) == (CLIENT_STEP, 7.3)
    assert client.steps_at_last_contact == [2] and client.q == 0
    assert sim.advance().kind == CONTACT_END


def test_idle_client_interacts_at_contact_time():
    c = cfg(n=1, s=1, K=2, swt=5.0, sit=1.0, T=1)
    sim = build_schedule(c)
    client = sim.clients[0]
    while (ev := sim.advance()).kind != CONTACT_BEGIN:
        pass
    assert ev.time == 5.0 and client.steps_at_last_contact == [2]


def test_step_in_flight_at_window_close_is_completed():
    # step would end at 9 but the window closes at 6
    c = cfg(n=1, s=1, K=3, swt=5.0, sit=1.0, T=1, timing={"kind": "uniform", "duration": 4.5})
    sim = build_schedule(c)
    client = sim.clients[0]
    tr = sim.run()
    assert tr.records[-1].sim_time == 6.0
    assert client.steps_at_last_contact == [2]
    assert tr.records[-1].total_local_steps == 2


@pytest.mark.parametrize("timing", [{"kind": "uniform", "duration": 0.7},
                                    {"kind": "exponential", "slow_fraction": 0.5}])
def test_quafl_wall_time_law(timing):
    tr = run(cfg(n=8, s=3, K=4, swt=2.5, sit=0.5, T=30, timing=timing), seed=4)
    dt = np.diff([r.sim_time for r in tr.records])
    np.testing.assert_allclose(dt, 3.0, rtol=0, atol=1e-9)


def test_fedavg_wall_time_law():
    tr = run(cfg(algo="fedavg", n=8, s=3, K=4, sit=0.5, T=10, timing={"kind": "uniform", "duration": 1.5}), seed=1)
    dt = np.diff([r.sim_time for r in tr.records])
    np.testing.assert_allclose(dt, 4 * 1.5 + 0.5, atol=1e-9)
    assert tr.records[-1].cum_bits == 10 * 2 * 3 * (32 * 10 + 128)


def test_fedavg_waits_for_slowest():
    c = cfg(algo="fedavg", n=6, s=6, K=2, sit=1.0, T=5,
            timing={"kind": "exponential", "slow_fraction": 0.5})
    sim = build_schedule(c, seed=2)
    durations = []
    orig = sim._duration

    def spy(i):
        v = orig(i)
        durations.append((i, v))
        return v

    sim._duration = spy
    last = 0.0
    while sim.server.t < 5:
        durations.clear()
        t0 = sim.server.t
        while sim.server.t == t0:
            sim.advance()
        per_client = {}
        for i, v in durations:
            per_client[i] = per_client.get(i, 0.0) + v
        assert sim.now - last == pytest.approx(max(per_client.values()) + 1.0)
        last = sim.now


def test_determinism_and_monotone_records():
    c = cfg(n=8, s=3, K=4, T=40, b=6, quant_window=2.0, timing={"kind": "exponential", "slow_fraction": 0.25})
    a, b = run(c, seed=9), run(c, seed=9)
    assert a.records == b.records
    assert a.sent_h_sums[3].tolist() == b.sent_h_sums[3].tolist()
    times = [r.sim_time for r in a.records]
    assert all(x < y for x, y in zip(times, times[1:]))
    steps = [r.total_local_steps for r in a.records]
    assert steps == sorted(steps)
    assert run(c, seed=10).records != a.records


def test_zero_budget_has_initial_record_only():
    tr = run(cfg(T=0))
    assert len(tr.records) == 1 and tr.records[0].t == 0 and tr.records[0].sim_time == 0.0


def test_conservation_of_steps(monkeypatch):
    calls = []
    orig = fedcore.local_step

    def counting(client, task, eta, i, rng):
        calls.append(i)
        return orig(client, task, eta, i, rng)

    monkeypatch.setattr(fedcore, "local_step", counting)
    for algo in ("quafl", "fedavg"):
        calls.clear()
        tr = run(cfg(algo=algo, n=7, s=3, K=4, T=25, timing={"kind": "exponential", "slow_fraction": 0.3}), seed=2)
        assert tr.records[-1].total_local_steps == len(calls)


def test_empirical_H_equals_K_when_contacts_are_rare():
    tr = run(cfg(n=6, s=2, K=4, swt=10.0, T=30))
    assert tr.records[-1].empirical_H == 4.0
    assert tr.zero_step_fraction == 0.0


def test_zero_step_contacts_are_logged():
    tr = run(cfg(n=2, s=2, K=3, swt=0.0, sit=0.1, T=20, timing={"kind": "uniform", "duration": 5.0}))
    assert tr.zero_step_fraction > 0
    assert tr.records[-1].empirical_H < 3


def test_horizon_stops_run():
    tr = run(cfg(T=None, horizon=31.0))
    assert tr.records[-1].sim_time <= 31.0
    assert len(tr.records) == 1 + 10  # rounds end at 3, 6, ..., 30


def test_baseline_trace():
    c = cfg(algo="baseline", T=15, timing={"kind": "uniform", "duration": 2.0})
    tr = run(c)
    assert [r.t for r in tr.records] == list(range(16))
    np.testing.assert_allclose(np.diff([r.sim_time for r in tr.records]), 2.0)
    assert tr.records[-1].total_local_steps == 15 and tr.records[-1].cum_bits == 0


def test_strict_mode_raises_and_record_mode_counts():
    bad = dict(n=6, s=3, K=3, T=30, b=2, quant_window=1e-3, eta=0.1)
    tr = run(cfg(**bad))
    assert tr.records[-1].decode_failures > 0
    with pytest.raises(QuantizationFailure) as info:
        run(cfg(failure_mode="strict", **bad))
    assert info.value.t >= 0


def test_task_size_mismatch_rejected():
    c = cfg(n=6)
    with pytest.raises(ValueError):
        Simulator(c, TaskSpec().build(5))


def _reference_two_point(T, eta, center):
    # n = s = K = 1, swt = 0, lossless: server and client average every round
    X = np.zeros_like(center)
    Xi = np.zeros_like(center)
    h = np.zeros_like(center)
    out = []
    for _ in range(T):
        Y = Xi - eta * h
        Xi = (X + Y) / 2
        X = (X + Y) / 2
        h = Xi - center
        out.append(X.copy())
    return out


def test_single_client_matches_reference_loop():
    task = {"kind": "quadratic", "d": 3, "spread": 1.0, "noise_sigma": 0.0, "offset": 1.0}
    c = cfg(n=1, s=1, K=1, swt=0.0, sit=1.0, b="lossless", eta=0.3, T=40, task=task)
    sim = build_schedule(c)
    got = []
    while sim.advance() is not None:
        if sim.server.t > len(got):
            got.append(sim.server.X.copy())
    ref = _reference_two_point(40, 0.3, sim.task.centers[0])
    np.testing.assert_allclose(np.array(got), np.array(ref), rtol=0, atol=1e-12)


def test_potentials_track_rounds():
    tr = run(cfg(T=12), seed=1)
    assert len(tr.potentials) == 13 and [p.t for p in tr.potentials] == list(range(13))
    assert len(tr.sent_h_sums) == 12
    assert all(p.phi >= 0 for p in tr.potentials)
