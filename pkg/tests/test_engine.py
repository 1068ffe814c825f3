import itertools
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from renass.engine import (
    OT,
    ST,
    TCM,
    TPM,
    Engine,
    PMWindow,
    SimParams,
    evaluate_service,
    run,
    run_replications,
    select_service,
)
from renass.errors import HorizonError, ValidationError
from renass.metrics import compare
from renass.model import (
    BusinessAgent,
    ComponentAgent,
    ConnectorAgent,
    ServiceAgent,
    Status,
    SystemModel,
    com,
    con,
)
from renass.reconfig import BindingTable
from renass.scenario import GenParams, generate

from conftest import single_component, small_generated


def test_perfect_reliability_never_fails():
    m = generate(GenParams(components=20, connectors=25, services=5, businesses=3, reliability=1.0, seed=3, substitutes_per_critical_agent=1))
    trace = run(m, SimParams(ticks=300, seed=1))
    assert not [e for e in trace.events if e.action == "Fail"]
    c = trace.final_counters
    assert (c[:, OT] == 300).all() and (c[:, [ST, TCM, TPM]] == 0).all()


def test_full_scale_failure_rate():
    # expected new failures per tick from an all-Normal state: (306 + 459) * 1e-4
    m = generate(GenParams(components=306, connectors=459, reliability=0.9999, seed=0))
    engine = Engine(m, SimParams(ticks=1))
    rows, rounds = 20_000, 50  # 10**6 one-tick samples
    state = engine.initial_state(range(rows))
    rng = np.random.default_rng(7)
    total = 0
    for _ in range(rounds):
        state.failed[:] = False
        total += int(engine.sample_failures(state, rng.random((rows, engine.n_agents))).sum())
    n = rows * rounds
    p = 1e-4
    mean = total / n
    sigma = math.sqrt(765 * p * (1 - p) / n)
    assert abs(mean - 0.0765) <= 3 * sigma


def test_survival_after_two_ticks():
    m = single_component(r=0.5)
    engine = Engine(m, SimParams(ticks=2))
    state = engine.initial_state(range(100_000))
    engine.step(state)
    engine.step(state)
    normal = 1.0 - state.failed[:, 0].mean()
    sigma = math.sqrt(0.25 * 0.75 / 100_000)
    assert abs(normal - 0.25) <= 3 * sigma


def _calls(model, ticks, rows=1):
    engine = Engine(model, SimParams(ticks=ticks))
    state = engine.initial_state(range(rows))
    called = []
    for _ in range(ticks):
        engine.step(state)
        called.append(state.called.copy())
    return engine, np.stack(called, axis=1)  # (R, T, B)


def test_single_service_full_duty_calls_every_tick():
    engine, called = _calls(single_component(r=1.0), 50)
    assert (called == engine.service_column[0]).all()


def test_zero_duty_is_always_idle():
    m = single_component(r=1.0)
    m = replace(m, businesses=(replace(m.businesses[0], duty_cycle=0.0),))
    _, called = _calls(m, 50)
    assert (called == -1).all()
    assert (run(m, SimParams(ticks=50)).final_counters[0] == [0, 50, 0, 0]).all()


def test_uniform_two_service_chain_frequencies():
    m = SystemModel(
        components=(ComponentAgent(0), ComponentAgent(1)),
        services=(ServiceAgent(0, (com(0),)), ServiceAgent(1, (com(1),))),
        businesses=(BusinessAgent.uniform(0, [0, 1]),),
    )
    n = 100_000
    engine, called = _calls(m, n)
    freq = (called == engine.service_column[0]).mean()
    assert abs(freq - 0.5) <= 3 * math.sqrt(0.25 / n)


@settings(max_examples=40, deadline=None)
@given(
    rows=st.lists(
        st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3).filter(lambda r: sum(r) > 0),
        min_size=3,
        max_size=3,
    ),
    duty=st.floats(0.0, 1.0),
    seed=st.integers(0, 2**31),
)
def test_scalar_select_matches_engine(rows, duty, seed):
    norm = tuple(tuple(x / sum(r) for x in r) for r in rows)
    norm = tuple(r[:-1] + (1.0 - sum(r[:-1]),) if 1.0 - sum(r[:-1]) >= 0 else r for r in norm)
    business = BusinessAgent(0, (0, 1, 2), norm, duty_cycle=duty)
    m = SystemModel(
        components=(ComponentAgent(0),),
        services=tuple(ServiceAgent(i, (com(0),)) for i in range(3)),
        businesses=(business,),
    )
    if any(v.path.startswith("businesses") for v in __import__("renass").validate(m)):
        return
    engine = Engine(m, SimParams(ticks=30))
    state = engine.initial_state()
    rng = np.random.default_rng(seed)
    previous = None
    for _ in range(30):
        u = rng.random((1, 2))
        engine.select_services(state, u)
        sid, previous = select_service(business, previous, u[0, 0], u[0, 1])
        got = state.called[0, 0]
        assert (sid is None and got == -1) or (sid is not None and got == engine.service_column[sid])


def test_evaluate_service_examples():
    m = SystemModel(
        components=(ComponentAgent(0), ComponentAgent(1), ComponentAgent(2)),
        connectors=(ConnectorAgent(0, 0, 1),),
        services=(ServiceAgent(0, (con(0),)),),
        businesses=(BusinessAgent.uniform(0, [0]),),
    )
    s = m.services[0]
    assert evaluate_service(s, BindingTable(), {}, m).up
    down = evaluate_service(s, BindingTable(), {com(1): Status.FAILED}, m)
    assert not down.up and down.blocking == {com(1)}
    rebound = evaluate_service(s, BindingTable({com(1): com(2)}), {com(1): Status.FAILED}, m)
    assert rebound.up
    pm = evaluate_service(s, BindingTable(), {}, m, in_pm=frozenset({con(0)}))
    assert pm.blocking == {con(0)}


def _enumerate_a0(r, substitutes, T):
    """Exact E[cumulative A0] by listing every failure-tick combination (tick T+1 = survives)."""
    total = 0.0
    k = 1 + substitutes
    for combo in itertools.product(range(1, T + 2), repeat=k):
        p = 1.0
        for f in combo:
            p *= r ** (f - 1) * (1 - r) if f <= T else r**T
        up_ticks = sum(1 for t in range(1, T + 1) if any(f > t for f in combo))
        total += p * up_ticks / T
    return total


def test_enumeration_oracle_values():
    assert _enumerate_a0(0.5, 0, 2) == pytest.approx(0.375, abs=1e-15)
    assert _enumerate_a0(0.5, 1, 2) == pytest.approx(0.59375, abs=1e-15)


@pytest.mark.parametrize("substitutes, expected", [(0, 0.375), (1, 0.59375)])
def test_step_expected_availability(substitutes, expected):
    n = 100_000
    result = run_replications(single_component(0.5, substitutes), SimParams(ticks=2, seed=11, replications=n))
    final = result.system_a0[:, -1]
    assert abs(final.mean() - expected) <= 3 * final.std(ddof=1) / math.sqrt(n)


def test_full_uptime_counters():
    trace = run(single_component(r=1.0), SimParams(ticks=37))
    assert tuple(trace.final_counters[0]) == (37, 0, 0, 0)


def test_run_is_deterministic():
    m = generate(GenParams(components=30, connectors=40, services=6, businesses=3, reliability=0.99, seed=5, substitutes_per_critical_agent=1))
    p = SimParams(ticks=400, seed=42)
    a, b = run(m, p), run(m, p)
    assert np.array_equal(a.counters, b.counters)
    assert a.events == b.events


def test_reconfig_dominates_baseline_each_tick():
    m = generate(GenParams(components=30, connectors=40, services=6, businesses=3, reliability=0.99, seed=5, substitutes_per_critical_agent=1))
    on = run(m, SimParams(ticks=500, seed=3))
    off = run(m, SimParams(ticks=500, seed=3, reconfig_enabled=False))
    assert (on.system_a0 >= off.system_a0).all()
    assert compare(on, off).min_gap >= 0


def test_single_tick_all_up():
    trace = run(single_component(r=1.0), SimParams(ticks=1))
    assert trace.samples == [(1, (1.0,), 1.0)]


def test_step_past_horizon():
    engine = Engine(single_component(), SimParams(ticks=1))
    state = engine.initial_state()
    engine.step(state)
    with pytest.raises(HorizonError):
        engine.step(state)


def test_invalid_model_rejected():
    m = single_component()
    with pytest.raises(ValidationError) as info:
        run(replace(m, services=(ServiceAgent(0, (com(5),)),)), SimParams(ticks=3))
    assert info.value.report


def test_repair_takes_exactly_repair_ticks():
    # near-zero reliability: fails whenever sampled; down 3 ticks, then up for one tick before failing again
    m = single_component(r=1e-12, repair=3)
    trace = run(m, SimParams(ticks=8))
    assert tuple(trace.final_counters[0]) == (2, 0, 6, 0)
    assert [e.tick for e in trace.events if e.action == "Recover"] == [4, 8]


def test_preventive_maintenance_is_charged_to_tpm():
    m = single_component(r=1.0)
    p = SimParams(ticks=10, pm_schedule=(PMWindow(com(0), period=4, duration=2),))
    trace = run(m, p)
    assert tuple(trace.final_counters[0]) == (6, 0, 0, 4)
    assert [(e.tick, e.action) for e in trace.events] == [(4, "PMStart"), (6, "PMEnd"), (8, "PMStart"), (10, "PMEnd")]


def test_corrective_wins_over_preventive():
    m = SystemModel(
        components=(ComponentAgent(0, 1.0), ComponentAgent(1, 1e-12)),
        services=(ServiceAgent(0, (com(0), com(1))),),
        businesses=(BusinessAgent.uniform(0, [0]),),
    )
    trace = run(m, SimParams(ticks=4, pm_schedule=(PMWindow(com(0), 2, 1),)))
    assert tuple(trace.final_counters[0]) == (0, 0, 4, 0)


def test_idle_business_accrues_standby_while_down():
    m = single_component(r=1e-12)
    m = replace(m, businesses=(replace(m.businesses[0], duty_cycle=0.0),))
    assert tuple(run(m, SimParams(ticks=5)).final_counters[0]) == (0, 5, 0, 0)


def test_batch_rows_match_individual_runs():
    m = small_generated(seed=2)
    p = SimParams(ticks=120, seed=9, replications=6)
    batch = run_replications(m, p, keep_counters=True, record_events=True)
    threaded = run_replications(m, p, threads=3, keep_counters=True, record_events=True)
    assert np.array_equal(batch.counters, threaded.counters)
    assert batch.events == threaded.events
    for r in range(6):
        single = run(m, p, replication=r)
        assert np.array_equal(single.counters, batch.counters[r])
        assert single.events == batch.trace(r).events


def test_horizon_prefix_is_stable():
    # variates come in fixed blocks, so a longer run repeats a shorter one's prefix
    m = small_generated(seed=2)
    short = run(m, SimParams(ticks=70, seed=4))
    long = run(m, SimParams(ticks=200, seed=4))
    assert np.array_equal(short.counters, long.counters[:70])


@st.composite
def scenarios(draw):
    comps = draw(st.integers(2, 10))
    model = generate(
        GenParams(
            components=comps,
            connectors=draw(st.integers(comps - 1, 2 * comps)),
            services=draw(st.integers(1, 4)),
            businesses=draw(st.integers(1, 3)),
            critical_fraction=draw(st.sampled_from([0.0, 0.5, 1.0])),
            substitutes_per_critical_agent=0,
            support_size_range=(1, 3),
            reliability=draw(st.sampled_from([0.9, 0.97, 0.995])),
            seed=draw(st.integers(0, 2**32)),
        )
    )
    repair = draw(st.sampled_from([None, 1, 5]))
    if repair is not None:
        model = replace(
            model,
            components=tuple(replace(c, repair_ticks=repair) for c in model.components),
            connectors=tuple(replace(c, repair_ticks=repair) for c in model.connectors),
        )
    duty = draw(st.sampled_from([1.0, 0.6]))
    model = replace(model, businesses=tuple(replace(b, duty_cycle=duty) for b in model.businesses))
    pm = ()
    if draw(st.booleans()):
        agent = draw(st.sampled_from(model.agent_ids))
        period = draw(st.integers(2, 20))
        pm = (PMWindow(agent, period, draw(st.integers(1, period))),)
    return model, SimParams(ticks=draw(st.integers(1, 150)), seed=draw(st.integers(0, 2**40)), pm_schedule=pm)


@settings(max_examples=40, deadline=None)
@given(scenarios())
def test_time_conservation_every_tick(case):
    model, params = case
    engine = Engine(model, params)
    state = engine.initial_state(range(3))
    for _ in range(params.ticks):
        engine.step(state)
        assert state.check_time_conservation()


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32))
def test_monotone_degradation_without_repair(seed):
    m = small_generated(seed=seed, reliability=0.97, substitutes=0)
    engine = Engine(m, SimParams(ticks=100, seed=seed, reconfig_enabled=False))
    state = engine.initial_state(range(4))
    prev = ~state.failed
    for _ in range(100):
        engine.step(state)
        normal = ~state.failed
        assert not (normal & ~prev).any()
        prev = normal
