"""Agent-structured description of a reconfigurable networked software system.

Components are failable nodes, connectors are directed failable edges between
components. Services require a support set of agents; businesses invoke
services through a branch-transition matrix. Everything here is immutable;
runtime state (statuses, bindings, counters) lives in the engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from functools import cached_property
from typing import Iterable, NamedTuple, Sequence

from .errors import UnknownAgentError, UnknownServiceError

ROW_SUM_TOLERANCE = 1e-9


class Kind(IntEnum):
    # Sort order matters: components are processed before connectors.
    COMPONENT = 0
    CONNECTOR = 1


class Status(str, Enum):
    NORMAL = "normal"
    FAILED = "failed"


class Action(str, Enum):
    FAIL = "Fail"
    RECOVER = "Recover"
    SUBSTITUTE_IN = "SubstituteIn"
    SUBSTITUTE_OUT = "SubstituteOut"


ACTIONS = tuple(Action)


class AgentId(NamedTuple):
    kind: Kind
    index: int

    def __str__(self) -> str:
        prefix = "com" if self.kind == Kind.COMPONENT else "con"
        return f"{prefix}{self.index}"


def com(index: int) -> AgentId:
    return AgentId(Kind.COMPONENT, index)


def con(index: int) -> AgentId:
    return AgentId(Kind.CONNECTOR, index)


@dataclass(frozen=True)
class BehaviorProfile:
    """Declarative stand-in for a component's knowledge, plan, goal and actions.

    Only ``plan`` and ``knowledge`` are cross-checked; the executable behaviour
    is the reconfiguration rule table.
    """

    knowledge: tuple[AgentId, ...] = ()
    plan: tuple[AgentId, ...] = ()
    critical: bool = False
    actions: tuple[Action, ...] = ACTIONS


@dataclass(frozen=True)
class ComponentAgent:
    index: int
    reliability: float = 1.0
    repair_ticks: int | None = None  # None: never repaired
    status: Status = Status.NORMAL
    behavior: BehaviorProfile = field(default_factory=BehaviorProfile)

    @property
    def id(self) -> AgentId:
        return AgentId(Kind.COMPONENT, self.index)


@dataclass(frozen=True)
class ConnectorAgent:
    index: int
    source: int
    target: int
    reliability: float = 1.0
    repair_ticks: int | None = None
    status: Status = Status.NORMAL
    plan: tuple[AgentId, ...] = ()
    actions: tuple[Action, ...] = ACTIONS

    @property
    def id(self) -> AgentId:
        return AgentId(Kind.CONNECTOR, self.index)

    @property
    def endpoints(self) -> tuple[AgentId, AgentId]:
        return com(self.source), com(self.target)


@dataclass(frozen=True)
class ServiceAgent:
    id: int
    support: tuple[AgentId, ...]


@dataclass(frozen=True)
class BusinessAgent:
    id: int
    services: tuple[int, ...]
    transition: tuple[tuple[float, ...], ...]
    duty_cycle: float = 1.0
    critical: bool = False

    @classmethod
    def uniform(cls, id: int, services: Sequence[int], **kwargs) -> BusinessAgent:
        n = len(services)
        row = tuple([1.0 / n] * n)
        return cls(id=id, services=tuple(services), transition=tuple([row] * n), **kwargs)


@dataclass(frozen=True)
class ReconfigRule:
    failed: AgentId
    substitutes: tuple[AgentId, ...]


@dataclass(frozen=True)
class ReconfigModel:
    id: int = 0
    rules: tuple[ReconfigRule, ...] = ()
    policy: str = "first-fit"
    strategy: str = "priority-order"

    @cached_property
    def by_failed(self) -> dict[AgentId, ReconfigRule]:
        return {rule.failed: rule for rule in self.rules}

    def rule_for(self, agent: AgentId) -> ReconfigRule | None:
        return self.by_failed.get(agent)


POLICIES = ("first-fit",)
STRATEGIES = ("priority-order",)


@dataclass(frozen=True)
class SystemModel:
    components: tuple[ComponentAgent, ...] = ()
    connectors: tuple[ConnectorAgent, ...] = ()
    services: tuple[ServiceAgent, ...] = ()
    businesses: tuple[BusinessAgent, ...] = ()
    reconfig: ReconfigModel = field(default_factory=ReconfigModel)

    @cached_property
    def agents(self) -> dict[AgentId, ComponentAgent | ConnectorAgent]:
        out: dict[AgentId, ComponentAgent | ConnectorAgent] = {}
        for agent in (*self.components, *self.connectors):
            out.setdefault(agent.id, agent)
        return out

    @cached_property
    def agent_ids(self) -> tuple[AgentId, ...]:
        """All agent ids in processing order: components, then connectors, by index."""
        return tuple(sorted(self.agents))

    @cached_property
    def service_map(self) -> dict[int, ServiceAgent]:
        return {s.id: s for s in self.services}

    def agent(self, agent_id: AgentId) -> ComponentAgent | ConnectorAgent:
        try:
            return self.agents[agent_id]
        except KeyError:
            raise UnknownAgentError(agent_id) from None

    def service(self, service_id: int) -> ServiceAgent:
        try:
            return self.service_map[service_id]
        except KeyError:
            raise UnknownServiceError(service_id) from None


class Violation(NamedTuple):
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


def _check_reliability(path: str, value: float, out: list[Violation]) -> None:
    if not isinstance(value, (int, float)) or not (0.0 < value <= 1.0) or math.isnan(value):
        out.append(Violation(f"{path}.reliability", f"must be in (0, 1], got {value!r}"))


def _check_repair(path: str, value: int | None, out: list[Violation]) -> None:
    if value is None:
        return
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        out.append(Violation(f"{path}.repair_ticks", f"must be a positive integer or null, got {value!r}"))


def _check_refs(path: str, refs: Iterable[AgentId], known: set[AgentId], out: list[Violation]) -> None:
    for i, ref in enumerate(refs):
        if ref not in known:
            out.append(Violation(f"{path}[{i}]", f"unknown agent {ref}"))


def validate(model: SystemModel) -> list[Violation]:
    """Return every structural violation in ``model``; an empty list means valid."""
    out: list[Violation] = []
    known: set[AgentId] = set()

    for kind, agents, label in (
        (Kind.COMPONENT, model.components, "components"),
        (Kind.CONNECTOR, model.connectors, "connectors"),
    ):
        for i, agent in enumerate(agents):
            path = f"{label}[{i}]"
            if isinstance(agent.index, bool) or not isinstance(agent.index, int) or agent.index < 0:
                out.append(Violation(f"{path}.index", f"must be a non-negative integer, got {agent.index!r}"))
            aid = AgentId(kind, agent.index)
            if aid in known:
                out.append(Violation(f"{path}.index", f"duplicate {label[:-1]} index {agent.index}"))
            known.add(aid)
            _check_reliability(path, agent.reliability, out)
            _check_repair(path, agent.repair_ticks, out)
            if not isinstance(agent.status, Status):
                out.append(Violation(f"{path}.status", f"unknown status {agent.status!r}"))

    component_ids = {a for a in known if a.kind == Kind.COMPONENT}
    for i, c in enumerate(model.components):
        _check_refs(f"components[{i}].behavior.plan", c.behavior.plan, known, out)
        _check_refs(f"components[{i}].behavior.knowledge", c.behavior.knowledge, known, out)
    for i, c in enumerate(model.connectors):
        path = f"connectors[{i}]"
        for end in ("source", "target"):
            if com(getattr(c, end)) not in component_ids:
                out.append(Violation(f"{path}.{end}", f"connector {c.index} references missing component {getattr(c, end)}"))
        if c.source == c.target:
            out.append(Violation(path, f"connector {c.index} is a self-loop on component {c.source}"))
        _check_refs(f"{path}.plan", c.plan, known, out)

    service_ids: set[int] = set()
    for i, s in enumerate(model.services):
        path = f"services[{i}]"
        if s.id in service_ids:
            out.append(Violation(f"{path}.id", f"duplicate service id {s.id}"))
        service_ids.add(s.id)
        if not s.support:
            out.append(Violation(f"{path}.support", "support set is empty"))
        _check_refs(f"{path}.support", s.support, known, out)

    if not model.businesses:
        out.append(Violation("businesses", "model defines no businesses; availability is undefined"))
    business_ids: set[int] = set()
    for i, b in enumerate(model.businesses):
        path = f"businesses[{i}]"
        if b.id in business_ids:
            out.append(Violation(f"{path}.id", f"duplicate business id {b.id}"))
        business_ids.add(b.id)
        if not b.services:
            out.append(Violation(f"{path}.services", "business manages no services"))
        for j, sid in enumerate(b.services):
            if sid not in service_ids:
                out.append(Violation(f"{path}.services[{j}]", f"unknown service {sid}"))
        if not (0.0 <= b.duty_cycle <= 1.0):
            out.append(Violation(f"{path}.duty_cycle", f"must be in [0, 1], got {b.duty_cycle!r}"))
        n = len(b.services)
        if len(b.transition) != n:
            out.append(Violation(f"{path}.transition", f"expected {n} rows, got {len(b.transition)}"))
        for r, row in enumerate(b.transition):
            rpath = f"{path}.transition[{r}]"
            if len(row) != n:
                out.append(Violation(rpath, f"business {b.id} row {r} has {len(row)} entries, expected {n}"))
            if any(p < 0 for p in row):
                out.append(Violation(rpath, f"business {b.id} row {r} has negative entries"))
            total = math.fsum(row)
            if abs(total - 1.0) > ROW_SUM_TOLERANCE:
                out.append(Violation(rpath, f"business {b.id} row {r} sums to {total!r}, expected 1"))

    rc = model.reconfig
    if rc.policy not in POLICIES:
        out.append(Violation("reconfig.policy", f"unknown policy {rc.policy!r}"))
    if rc.strategy not in STRATEGIES:
        out.append(Violation("reconfig.strategy", f"unknown strategy {rc.strategy!r}"))
    seen_failed: set[AgentId] = set()
    for i, rule in enumerate(rc.rules):
        path = f"reconfig.rules[{i}]"
        if rule.failed in seen_failed:
            out.append(Violation(f"{path}.failed", f"second rule for {rule.failed}"))
        seen_failed.add(rule.failed)
        if rule.failed not in known:
            out.append(Violation(f"{path}.failed", f"unknown agent {rule.failed}"))
        if not rule.substitutes:
            out.append(Violation(f"{path}.substitutes", "substitute list is empty"))
        if rule.failed in rule.substitutes:
            out.append(Violation(f"{path}.substitutes", f"{rule.failed} substitutes for itself"))
        if len(set(rule.substitutes)) != len(rule.substitutes):
            out.append(Violation(f"{path}.substitutes", "duplicate substitutes"))
        for j, sub in enumerate(rule.substitutes):
            if sub.kind != rule.failed.kind:
                out.append(Violation(f"{path}.substitutes[{j}]", f"{sub} is not the same kind as {rule.failed}"))
        _check_refs(f"{path}.substitutes", rule.substitutes, known, out)

    return out


def support_closure(service: ServiceAgent | int, model: SystemModel) -> frozenset[AgentId]:
    """Service support set plus the endpoint components of every connector in it."""
    if not isinstance(service, ServiceAgent):
        service = model.service(service)
    closure = set(service.support)
    for aid in service.support:
        if aid.kind == Kind.CONNECTOR:
            closure.update(model.agent(aid).endpoints)
    return frozenset(closure)
