"""Exact expected availability for small, non-repairable models.

Two routes that share no code with the engine's sampling path:

* :func:`exact_expected_availability` multiplies independent slot survival
  probabilities (an agent together with its hot-standby substitutes) over a
  service's closure and weights services by the business call distribution.
* :func:`brute_force_availability` enumerates every assignment of failure
  ticks to agents with its exact probability and replays the binding rules on
  each assignment.

Because every tick is charged to exactly one counter, MUT + MDT = T, so the
expected cumulative A0 at T is the time average of per-tick up probabilities.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .engine import SimParams, run_replications
from .errors import DomainSizeError, UndefinedMetricError, UnsupportedConfigurationError, ValidationError
from .model import AgentId, BusinessAgent, Status, SystemModel, support_closure, validate
from .reconfig import reconfigurable_rules


@dataclass(frozen=True)
class SmallModelBound:
    max_agents: int = 12
    max_services: int = 4


BRUTE_FORCE_MAX_AGENTS = 6
BRUTE_FORCE_MAX_TICKS = 10


def _reliability(model: SystemModel, agent: AgentId, params: SimParams | None) -> float:
    if params is not None and params.reliability_override is not None:
        return params.reliability_override
    return model.agent(agent).reliability


def _check_supported(model: SystemModel, agents, params: SimParams | None) -> None:
    if params is not None and params.pm_schedule:
        raise UnsupportedConfigurationError("preventive maintenance is outside the oracle domain")
    for a in agents:
        agent = model.agent(a)
        if agent.repair_ticks is not None:
            raise UnsupportedConfigurationError(f"{a} is repairable; the oracle covers non-repairable agents only")
        if agent.status is not Status.NORMAL:
            raise UnsupportedConfigurationError(f"{a} starts Failed")


def exact_slot_availability(
    slot: Sequence[AgentId], t: int, model: SystemModel, params: SimParams | None = None
) -> float:
    """Probability that at least one member of ``slot`` is still Normal after ``t`` ticks."""
    _check_supported(model, slot, params)
    all_down = 1.0
    for member in slot:
        all_down *= 1.0 - _reliability(model, member, params) ** t
    return 1.0 - all_down


def _call_distributions(business: BusinessAgent, T: int) -> list[tuple[float, np.ndarray]]:
    """Per tick: (probability of calling, distribution of the called service given a call)."""
    m = len(business.services)
    d = business.duty_cycle
    P = np.array(business.transition, dtype=float)
    uniform = np.full(m, 1.0 / m)
    never = 1.0  # probability no call has happened yet
    last = np.zeros(m)  # mass on "last call was service k"
    out = []
    for _ in range(T):
        given_call = never * uniform + last @ P
        out.append((d, given_call))
        last = (1.0 - d) * last + d * given_call
        never *= 1.0 - d
    return out


def _slots(model: SystemModel, reconfig_enabled: bool) -> dict[AgentId, tuple[AgentId, ...]]:
    if not reconfig_enabled:
        return {}
    return {r.failed: (r.failed, *r.substitutes) for r in reconfigurable_rules(model)}


def _check_model(model: SystemModel, T: int) -> None:
    report = validate(model)
    if report:
        raise ValidationError(report)
    if T < 1:
        raise UndefinedMetricError("A0 is undefined over an empty horizon")


def exact_expected_availability(
    model: SystemModel,
    T: int,
    params: SimParams | None = None,
    bound: SmallModelBound = SmallModelBound(),
) -> float:
    """Expected cumulative system A0 at tick ``T`` by the slot-product formula."""
    _check_model(model, T)
    if len(model.agents) > bound.max_agents:
        raise DomainSizeError(f"{len(model.agents)} agents exceeds the oracle bound of {bound.max_agents}")
    if len(model.services) > bound.max_services:
        raise DomainSizeError(f"{len(model.services)} services exceeds the oracle bound of {bound.max_services}")
    _check_supported(model, model.agents, params)
    reconfig_enabled = params.reconfig_enabled if params is not None else True
    slots = _slots(model, reconfig_enabled)

    pools = [set(s[1:]) for s in slots.values()]
    for a, b in itertools.combinations(pools, 2):
        if a & b:
            raise UnsupportedConfigurationError("substitute sets overlap; slots are not independent")
    closures = {}
    for s in model.services:
        members = [slots.get(a, (a,)) for a in sorted(support_closure(s, model))]
        flat = [x for slot in members for x in slot]
        if len(flat) != len(set(flat)):
            raise UnsupportedConfigurationError(f"service {s.id} uses an agent and its substitute together")
        closures[s.id] = members

    calls = {b.id: _call_distributions(b, T) for b in model.businesses}
    total = 0.0
    for t in range(1, T + 1):
        up = {sid: math.prod(exact_slot_availability(slot, t, model, params) for slot in members)
              for sid, members in closures.items()}
        per_business = []
        for b in model.businesses:
            duty, dist = calls[b.id][t - 1]
            called_up = sum(p * up[sid] for p, sid in zip(dist, b.services))
            per_business.append((1.0 - duty) + duty * called_up)
        total += sum(per_business) / len(per_business)
    return float(total / T)


def brute_force_availability(model: SystemModel, T: int, params: SimParams | None = None) -> float:
    """Expected cumulative system A0 at ``T`` by enumerating all failure-tick assignments."""
    _check_model(model, T)
    agents = list(model.agent_ids)
    if len(agents) > BRUTE_FORCE_MAX_AGENTS or T > BRUTE_FORCE_MAX_TICKS:
        raise DomainSizeError(
            f"brute force needs <= {BRUTE_FORCE_MAX_AGENTS} agents and T <= {BRUTE_FORCE_MAX_TICKS}"
        )
    _check_supported(model, agents, params)
    reconfig_enabled = params.reconfig_enabled if params is not None else True
    k = len(agents)
    pos = {a: i for i, a in enumerate(agents)}

    # failure tick f in 1..T, or T + 1 for "survives the horizon"
    choices = np.arange(1, T + 2)
    grids = np.meshgrid(*([choices] * k), indexing="ij")
    fail_at = np.stack([g.ravel() for g in grids], axis=1)
    weight = np.ones(len(fail_at))
    for i, a in enumerate(agents):
        r = _reliability(model, a, params)
        f = fail_at[:, i]
        weight *= np.where(f <= T, r ** (f - 1) * (1.0 - r), r**T)

    rules = []
    if reconfig_enabled:
        rules = [(pos[r.failed], [pos[s] for s in r.substitutes]) for r in reconfigurable_rules(model)]
    serving = {orig: np.full(len(fail_at), orig) for orig, _ in rules}
    idx = np.arange(len(fail_at))
    closures = {s.id: [pos[a] for a in support_closure(s, model)] for s in model.services}
    calls = {b.id: _brute_force_calls(b, T) for b in model.businesses}

    total = 0.0
    for t in range(1, T + 1):
        alive = fail_at > t
        for orig, _ in rules:
            back = (serving[orig] != orig) & alive[:, orig]
            serving[orig][back] = orig
        for orig, subs in rules:
            cur = serving[orig]
            down = ~alive[idx, cur]
            cur[down] = orig
            for s in subs:
                busy = np.zeros(len(fail_at), dtype=bool)
                for other, _ in rules:
                    if other != orig:
                        busy |= serving[other] == s
                pick = down & (cur == orig) & alive[:, s] & ~busy
                cur[pick] = s
        eff = alive.copy()
        for orig, _ in rules:
            eff[:, orig] = alive[idx, serving[orig]]
        up_prob = {sid: float(weight[eff[:, cols].all(axis=1)].sum()) for sid, cols in closures.items()}
        tick_total = 0.0
        for b in model.businesses:
            p_idle, dist = calls[b.id][t - 1]
            tick_total += p_idle + sum(p * up_prob[sid] for sid, p in dist.items())
        total += tick_total / len(model.businesses)
    return total / T


def _brute_force_calls(business: BusinessAgent, T: int) -> list[tuple[float, dict[int, float]]]:
    """Forward recursion over the last-called position: (P(idle), {service: P(called)}) per tick."""
    m = len(business.services)
    d = business.duty_cycle
    state = {None: 1.0}
    out = []
    for _ in range(T):
        called: dict[int, float] = {}
        nxt: dict = {}
        for last, p in state.items():
            if p == 0.0:
                continue
            nxt[last] = nxt.get(last, 0.0) + p * (1.0 - d)
            row = [1.0 / m] * m if last is None else business.transition[last]
            for j, q in enumerate(row):
                if q:
                    nxt[j] = nxt.get(j, 0.0) + p * d * q
                    sid = business.services[j]
                    called[sid] = called.get(sid, 0.0) + p * d * q
        out.append((1.0 - d, called))
        state = nxt
    return out


class OracleCheck(NamedTuple):
    oracle: float
    estimate: float
    std: float
    replications: int
    z: float

    @property
    def passed(self) -> bool:
        return abs(self.z) <= 3.0


def monte_carlo_check(
    model: SystemModel,
    T: int,
    replications: int = 100_000,
    seed: int = 0,
    params: SimParams | None = None,
    threads: int = 0,
) -> OracleCheck:
    """Compare the engine's mean final system A0 over ``replications`` runs with the exact value."""
    if params is None:
        params = SimParams(ticks=T, seed=seed, replications=replications)
    exact = exact_expected_availability(model, T, params)
    result = run_replications(model, params, threads=threads)
    final = result.system_a0[:, -1]
    estimate = float(final.mean())
    std = float(final.std(ddof=1)) if len(final) > 1 else 0.0
    err = std / math.sqrt(len(final))
    if err == 0.0:
        z = 0.0 if abs(estimate - exact) < 1e-12 else math.inf
    else:
        z = (estimate - exact) / err
    return OracleCheck(exact, estimate, std, len(final), float(z))
