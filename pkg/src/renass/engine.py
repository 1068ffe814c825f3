"""Equal-step simulation engine.

Every tick runs the same fixed sequence for all agents: advance the clock,
open/close preventive-maintenance windows, sample failures, count down
repairs, reconfigure, let each business call a service and charge the tick to
exactly one of OT/ST/TCM/TPM, then record the availability sample.

State arrays carry a leading replication axis so a single run and a Monte
Carlo batch share one code path. Each replication owns a generator seeded with
``seed + replication`` and draws variates in fixed blocks of ``BLOCK`` ticks:
first a ``(BLOCK, n_agents)`` failure block in ascending agent order, then a
``(BLOCK, 2 * n_businesses)`` workload block holding a duty and a branch
variate per business. Failure variates are drawn for every agent every tick,
so the failure stream is identical whether reconfiguration is on or off.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .errors import HorizonError, ValidationError
from .model import (
    AgentId,
    BusinessAgent,
    ServiceAgent,
    Status,
    SystemModel,
    support_closure,
    validate,
)
from .reconfig import BindingTable, CompiledReconfig

BLOCK = 64
# float64 budget for one batch of pre-drawn variates
VARIATE_BUDGET = 4_000_000

OT, ST, TCM, TPM = range(4)
COUNTER_NAMES = ("OT", "ST", "TCM", "TPM")


class BusinessState(IntEnum):
    IDLE = 0
    CALLING = 1
    BLOCKED = 2


@dataclass(frozen=True)
class PMWindow:
    """Preventive maintenance on ``agent`` for ``duration`` ticks every ``period`` ticks.

    The first window opens at tick ``period``.
    """

    agent: AgentId
    period: int
    duration: int

    def active(self, tick: int) -> bool:
        return tick >= self.period and tick % self.period < self.duration


@dataclass(frozen=True)
class SimParams:
    ticks: int
    seed: int = 0
    reconfig_enabled: bool = True
    reliability_override: float | None = None
    pm_schedule: tuple[PMWindow, ...] = ()
    replications: int = 1

    def __post_init__(self):
        if isinstance(self.ticks, bool) or not isinstance(self.ticks, int) or self.ticks < 1:
            raise ValueError(f"ticks must be a positive integer, got {self.ticks!r}")
        if not isinstance(self.replications, int) or self.replications < 1:
            raise ValueError(f"replications must be a positive integer, got {self.replications!r}")
        if self.reliability_override is not None and not (0.0 < self.reliability_override <= 1.0):
            raise ValueError(f"reliability_override must be in (0, 1], got {self.reliability_override!r}")
        for w in self.pm_schedule:
            if w.period < 1 or not (1 <= w.duration <= w.period):
                raise ValueError(f"bad PM window {w}: need period >= 1 and 1 <= duration <= period")
        object.__setattr__(self, "pm_schedule", tuple(self.pm_schedule))


class Event(NamedTuple):
    tick: int
    action: str
    agent: AgentId
    old: AgentId | None = None
    new: AgentId | None = None
    replication: int = 0


@dataclass
class SimulationTrace:
    """Result of one replication.

    ``counters[t - 1, b]`` holds the cumulative (OT, ST, TCM, TPM) of the b-th
    business (ascending id) after tick ``t``.
    """

    params: SimParams
    replication: int
    business_ids: tuple[int, ...]
    counters: np.ndarray
    events: tuple[Event, ...] = ()

    @property
    def seed(self) -> int:
        return self.params.seed + self.replication

    @property
    def ticks(self) -> int:
        return self.counters.shape[0]

    @property
    def final_counters(self) -> np.ndarray:
        return self.counters[-1]

    @property
    def business_a0(self) -> np.ndarray:
        """(T, B) cumulative operational availability per business."""
        return _cumulative_a0(self.counters)

    @property
    def system_a0(self) -> np.ndarray:
        return self.business_a0.mean(axis=-1)

    @property
    def samples(self) -> list[tuple[int, tuple[float, ...], float]]:
        per = self.business_a0
        system = per.mean(axis=-1)
        return [(t + 1, tuple(per[t].tolist()), float(system[t])) for t in range(self.ticks)]


@dataclass
class BatchResult:
    """Many replications of one configuration, rows ordered by replication index."""

    params: SimParams
    replications: tuple[int, ...]
    business_ids: tuple[int, ...]
    system_a0: np.ndarray  # (R, T)
    final_counters: np.ndarray  # (R, B, 4)
    counters: np.ndarray | None = None  # (R, T, B, 4) when kept
    events: tuple[Event, ...] = ()

    def trace(self, row: int) -> SimulationTrace:
        if self.counters is None:
            raise ValueError("batch was run without keep_counters")
        rep = self.replications[row]
        return SimulationTrace(
            params=self.params,
            replication=rep,
            business_ids=self.business_ids,
            counters=self.counters[row],
            events=tuple(e for e in self.events if e.replication == rep),
        )


def _cumulative_a0(counters: np.ndarray) -> np.ndarray:
    up = counters[..., OT] + counters[..., ST]
    total = counters.sum(axis=-1)
    return up / total


class _Streams:
    """Per-replication generators feeding pre-drawn variate blocks."""

    def __init__(self, seeds: Sequence[int], n_agents: int, n_work: int):
        self.generators = [np.random.default_rng(s % 2**64) for s in seeds]
        self.n_agents = n_agents
        self.n_work = n_work
        self._pos = BLOCK
        self._fail: np.ndarray | None = None
        self._work: np.ndarray | None = None

    def _refill(self) -> None:
        fail, work = [], []
        for g in self.generators:
            fail.append(g.random((BLOCK, self.n_agents)))
            work.append(g.random((BLOCK, self.n_work)))
        self._fail = np.stack(fail, axis=1)  # (BLOCK, R, n)
        self._work = np.stack(work, axis=1)
        self._pos = 0

    def next_tick(self) -> tuple[np.ndarray, np.ndarray]:
        if self._pos == BLOCK:
            self._refill()
        i = self._pos
        self._pos += 1
        return self._fail[i], self._work[i]


@dataclass
class EngineState:
    clock: int
    replications: tuple[int, ...]
    failed: np.ndarray  # (R, n) bool
    countdown: np.ndarray  # (R, n) remaining repair ticks, 0 when not repairing
    in_pm: np.ndarray  # (n,) bool
    bind: np.ndarray  # (R, n) column serving each original
    holder: np.ndarray  # (R, n) original a substitute stands in for, or -1
    last_choice: np.ndarray  # (R, B) position of the last called service, or the "none" row
    called: np.ndarray  # (R, B) column of the service called this tick, -1 when idle
    business_state: np.ndarray  # (R, B)
    counters: np.ndarray  # (R, B, 4)
    service_up: np.ndarray  # (R, S)
    service_pm_only: np.ndarray  # (R, S)
    streams: _Streams = field(repr=False)
    events: list[Event] | None = None

    @property
    def rows(self) -> int:
        return len(self.replications)

    def check_time_conservation(self) -> bool:
        return bool((self.counters.sum(axis=-1) == self.clock).all())


class Engine:
    """A system model compiled to arrays for one parameter set."""

    def __init__(self, model: SystemModel, params: SimParams):
        report = validate(model)
        if report:
            raise ValidationError(report)
        self.model = model
        self.params = params

        self.agent_ids: tuple[AgentId, ...] = model.agent_ids
        self.column: dict[AgentId, int] = {a: i for i, a in enumerate(self.agent_ids)}
        n = len(self.agent_ids)
        agents = [model.agents[a] for a in self.agent_ids]
        override = params.reliability_override
        self.reliability = np.array([override if override is not None else a.reliability for a in agents])
        self.repair_ticks = np.array([a.repair_ticks or 0 for a in agents], dtype=np.int64)
        self.initially_failed = np.array([a.status is Status.FAILED for a in agents], dtype=bool)

        self.services: tuple[ServiceAgent, ...] = model.services
        self.service_column = {s.id: i for i, s in enumerate(self.services)}
        incidence = np.zeros((n, len(self.services)), dtype=np.float32)
        for k, s in enumerate(self.services):
            for a in support_closure(s, model):
                incidence[self.column[a], k] = 1.0
        self.incidence = incidence

        for w in params.pm_schedule:
            if w.agent not in self.column:
                raise ValueError(f"PM window names unknown agent {w.agent}")
        self.pm_windows = [(self.column[w.agent], w) for w in params.pm_schedule]

        self.businesses: tuple[BusinessAgent, ...] = tuple(sorted(model.businesses, key=lambda b: b.id))
        self.business_ids = tuple(b.id for b in self.businesses)
        nb = len(self.businesses)
        smax = max((len(b.services) for b in self.businesses), default=1)
        self.none_row = smax
        self.duty = np.array([b.duty_cycle for b in self.businesses])
        self.n_services = np.array([len(b.services) for b in self.businesses], dtype=np.intp)
        # cum[b, row, k]: cumulative branch probabilities; row smax is the uniform initial draw
        cum = np.full((nb, smax + 1, smax), 2.0)
        svc_col = np.zeros((nb, smax), dtype=np.intp)
        for i, b in enumerate(self.businesses):
            m = len(b.services)
            for r, row in enumerate(b.transition):
                cum[i, r, :m] = np.cumsum(row)
            cum[i, smax, :m] = np.cumsum(np.full(m, 1.0 / m))
            svc_col[i, :m] = [self.service_column[sid] for sid in b.services]
        self.cumulative = cum
        self.service_of_choice = svc_col

        self.reconfig = (
            CompiledReconfig.from_model(model, self.column) if params.reconfig_enabled else CompiledReconfig.empty()
        )

    @property
    def n_agents(self) -> int:
        return len(self.agent_ids)

    def initial_state(self, replications: Sequence[int] = (0,), record_events: bool = False) -> EngineState:
        reps = tuple(replications)
        r, n, nb = len(reps), self.n_agents, len(self.businesses)
        failed = np.repeat(self.initially_failed[None, :], r, axis=0)
        state = EngineState(
            clock=0,
            replications=reps,
            failed=failed,
            countdown=np.where(failed, self.repair_ticks[None, :], 0),
            in_pm=np.zeros(n, dtype=bool),
            bind=np.repeat(np.arange(n, dtype=np.intp)[None, :], r, axis=0),
            holder=np.full((r, n), -1, dtype=np.intp),
            last_choice=np.full((r, nb), self.none_row, dtype=np.intp),
            called=np.full((r, nb), -1, dtype=np.intp),
            business_state=np.zeros((r, nb), dtype=np.int8),
            counters=np.zeros((r, nb, 4), dtype=np.int64),
            service_up=np.ones((r, len(self.services)), dtype=bool),
            service_pm_only=np.zeros((r, len(self.services)), dtype=bool),
            streams=_Streams([self.params.seed + i for i in reps], n, 2 * nb),
            events=[] if record_events else None,
        )
        self._refresh(state)
        return state

    # -- tick phases -------------------------------------------------------

    def _update_pm(self, state: EngineState, tick: int) -> bool:
        if not self.pm_windows:
            return False
        new = np.zeros_like(state.in_pm)
        for col, window in self.pm_windows:
            new[col] |= window.active(tick)
        changed = new != state.in_pm
        if state.events is not None and changed.any():
            for col in np.flatnonzero(changed):
                action = "PMStart" if new[col] else "PMEnd"
                for rep in state.replications:
                    state.events.append(Event(tick, action, self.agent_ids[col], replication=rep))
        state.in_pm = new
        return bool(changed.any())

    def sample_failures(self, state: EngineState, u: np.ndarray) -> np.ndarray:
        """Mark Normal agents outside PM as Failed where ``u >= reliability``.

        ``u`` holds one variate per agent per row; variates of agents that are
        already Failed or in PM are discarded. Returns the mask of new failures.
        """
        new = ~state.failed & ~state.in_pm[None, :] & (u >= self.reliability[None, :])
        if new.any():
            state.failed |= new
            state.countdown = np.where(new, self.repair_ticks[None, :], state.countdown)
        return new

    def _repair(self, state: EngineState, fresh: np.ndarray) -> np.ndarray:
        repairing = state.failed & ~fresh & (state.countdown > 0)
        if not repairing.any():
            return repairing
        state.countdown = state.countdown - repairing
        recovered = repairing & (state.countdown == 0)
        state.failed &= ~recovered
        return recovered

    def _refresh(self, state: EngineState) -> None:
        """Recompute which services are up from statuses and bindings."""
        eff_failed = np.take_along_axis(state.failed, state.bind, axis=1)
        eff_pm = state.in_pm[state.bind] & ~eff_failed
        blocked_fail = (eff_failed.astype(np.float32) @ self.incidence) > 0
        blocked_pm = (eff_pm.astype(np.float32) @ self.incidence) > 0
        state.service_up = ~blocked_fail & ~blocked_pm
        state.service_pm_only = ~blocked_fail & blocked_pm

    def select_services(self, state: EngineState, u_work: np.ndarray) -> np.ndarray:
        """Draw this tick's call for every business; returns (R, B) call mask."""
        nb = len(self.businesses)
        u_duty = u_work[:, 0::2]
        u_branch = u_work[:, 1::2]
        call = u_duty < self.duty[None, :]
        rows_cum = self.cumulative[np.arange(nb)[None, :], state.last_choice]  # (R, B, smax)
        choice = (rows_cum <= u_branch[..., None]).sum(axis=-1)
        choice = np.minimum(choice, self.n_services[None, :] - 1)
        state.last_choice = np.where(call, choice, state.last_choice)
        state.called = np.where(call, self.service_of_choice[np.arange(nb)[None, :], choice], -1)
        return call

    def _account(self, state: EngineState, call: np.ndarray) -> None:
        rows = np.arange(state.rows)[:, None]
        col = np.maximum(state.called, 0)
        up = state.service_up[rows, col]
        pm_only = state.service_pm_only[rows, col]
        slot = np.where(~call, ST, np.where(up, OT, np.where(pm_only, TPM, TCM)))
        nb = len(self.businesses)
        flat = state.counters.reshape(-1)
        flat[(rows * nb + np.arange(nb)[None, :]) * 4 + slot] += 1
        state.business_state = np.where(
            ~call, BusinessState.IDLE, np.where(up, BusinessState.CALLING, BusinessState.BLOCKED)
        ).astype(np.int8)

    def _log_status(self, state: EngineState, tick: int, mask: np.ndarray, action: str) -> None:
        for r, col in zip(*np.nonzero(mask)):
            state.events.append(Event(tick, action, self.agent_ids[col], replication=state.replications[r]))

    def step(self, state: EngineState) -> EngineState:
        if state.clock >= self.params.ticks:
            raise HorizonError(f"clock already at horizon {self.params.ticks}")
        state.clock += 1
        tick = state.clock
        u_fail, u_work = state.streams.next_tick()

        dirty = self._update_pm(state, tick)
        fresh = self.sample_failures(state, u_fail)
        recovered = self._repair(state, fresh)
        has_fresh, has_recovered = fresh.any(), recovered.any()
        if state.events is not None:
            if has_fresh:
                self._log_status(state, tick, fresh, "Fail")
            if has_recovered:
                self._log_status(state, tick, recovered, "Recover")
        dirty = dirty or has_fresh or has_recovered

        if dirty:
            raw = [] if state.events is not None else None
            self.reconfig.apply(state.bind, state.holder, state.failed, ~state.failed & ~state.in_pm[None, :], raw)
            if raw:
                ids = self.agent_ids
                for r, j, old, new in raw:
                    action = "SubstituteOut" if new == j else "SubstituteIn"
                    state.events.append(Event(tick, action, ids[j], ids[old], ids[new], state.replications[r]))
            self._refresh(state)

        call = self.select_services(state, u_work)
        self._account(state, call)
        return state

    # -- driving -----------------------------------------------------------

    def bindings(self, state: EngineState, row: int = 0) -> BindingTable:
        ids = self.agent_ids
        return BindingTable({ids[j]: ids[b] for j, b in enumerate(state.bind[row]) if b != j})

    def statuses(self, state: EngineState, row: int = 0) -> dict[AgentId, Status]:
        return {a: Status.FAILED if state.failed[row, i] else Status.NORMAL for i, a in enumerate(self.agent_ids)}

    def batch(
        self,
        replications: Sequence[int],
        keep_counters: bool = False,
        record_events: bool = False,
    ) -> BatchResult:
        """Run every replication in ``replications`` to the horizon in one array batch."""
        T = self.params.ticks
        state = self.initial_state(replications, record_events)
        system = np.empty((state.rows, T))
        history = np.empty((state.rows, T, len(self.businesses), 4), dtype=np.int64) if keep_counters else None
        for t in range(T):
            self.step(state)
            c = state.counters
            system[:, t] = ((c[..., OT] + c[..., ST]) / state.clock).mean(axis=-1)
            if history is not None:
                history[:, t] = c
        return BatchResult(
            params=self.params,
            replications=state.replications,
            business_ids=self.business_ids,
            system_a0=system,
            final_counters=state.counters.copy(),
            counters=history,
            # stable sort: per replication, append order is tick order
            events=tuple(sorted(state.events or (), key=lambda e: e.replication)),
        )

    def rows_per_batch(self) -> int:
        per_row = BLOCK * (self.n_agents + 2 * len(self.businesses))
        per_row += self.params.ticks * len(self.businesses) * 4
        return max(1, VARIATE_BUDGET // per_row)


def run(model: SystemModel, params: SimParams, replication: int = 0) -> SimulationTrace:
    """Simulate one replication (seed ``params.seed + replication``) with full counters and events."""
    engine = Engine(model, params)
    return engine.batch([replication], keep_counters=True, record_events=True).trace(0)


def run_replications(
    model: SystemModel,
    params: SimParams,
    threads: int = 0,
    keep_counters: bool = False,
    record_events: bool = False,
) -> BatchResult:
    """Run ``params.replications`` replications, optionally on a thread pool.

    Output is independent of ``threads`` because every replication owns its
    generator and rows never interact.
    """
    engine = Engine(model, params)
    reps = list(range(params.replications))
    size = engine.rows_per_batch()
    if threads > 1:
        size = min(size, max(1, math.ceil(len(reps) / threads)))
    chunks = [reps[i : i + size] for i in range(0, len(reps), size)]

    def work(chunk):
        return engine.batch(chunk, keep_counters=keep_counters, record_events=record_events)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]

    return BatchResult(
        params=params,
        replications=tuple(reps),
        business_ids=engine.business_ids,
        system_a0=np.concatenate([p.system_a0 for p in parts]),
        final_counters=np.concatenate([p.final_counters for p in parts]),
        counters=np.concatenate([p.counters for p in parts]) if keep_counters else None,
        events=tuple(sorted((e for p in parts for e in p.events), key=lambda e: e.replication)),
    )


def compare_runs(model: SystemModel, params: SimParams, threads: int = 0) -> tuple[BatchResult, BatchResult]:
    """Paired-seed runs with reconfiguration on and off."""
    on = run_replications(model, replace(params, reconfig_enabled=True), threads)
    off = run_replications(model, replace(params, reconfig_enabled=False), threads)
    return on, off


# -- scalar reference operations ----------------------------------------------


def select_service(
    business: BusinessAgent, previous: int | None, u_duty: float, u_branch: float
) -> tuple[int | None, int | None]:
    """Single-business call draw.

    ``previous`` is the position (in ``business.services``) of the last call,
    or None before the first. Returns (called service id or None when idle,
    updated ``previous``).
    """
    if not u_duty < business.duty_cycle:
        return None, previous
    n = len(business.services)
    row = [1.0 / n] * n if previous is None else business.transition[previous]
    acc = 0.0
    choice = n - 1
    for k, p in enumerate(row):
        acc += p
        if u_branch < acc:
            choice = k
            break
    return business.services[choice], choice


class ServiceStatus(NamedTuple):
    up: bool
    blocking: frozenset[AgentId]


def evaluate_service(
    service: ServiceAgent,
    bindings: Mapping[AgentId, AgentId],
    statuses: Mapping[AgentId, Status],
    model: SystemModel,
    in_pm: frozenset[AgentId] = frozenset(),
) -> ServiceStatus:
    """Up iff every closure agent, mapped through ``bindings``, is Normal and not in PM."""
    blocking = set()
    for agent in support_closure(service, model):
        serving = bindings.get(agent, agent)
        if statuses.get(serving, Status.NORMAL) is not Status.NORMAL or serving in in_pm:
            blocking.add(serving)
    return ServiceStatus(not blocking, frozenset(blocking))


def expected_failures_per_tick(model: SystemModel, params: SimParams | None = None) -> float:
    override = params.reliability_override if params else None
    return sum(1.0 - (override if override is not None else a.reliability) for a in model.agents.values())
