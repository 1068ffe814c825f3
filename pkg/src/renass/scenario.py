"""Model files and generated topologies.

The file format is a single UTF-8 JSON document, described in
``docs/model-format.md`` at the repository root.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict
from pydantic import ValidationError as PydanticValidationError

from .errors import GenerationError, ParseError, ValidationError
from .model import (
    AgentId,
    BehaviorProfile,
    BusinessAgent,
    ComponentAgent,
    ConnectorAgent,
    Kind,
    ReconfigModel,
    ReconfigRule,
    ServiceAgent,
    Status,
    SystemModel,
    com,
    con,
    support_closure,
    validate,
)

FORMAT_VERSION = 1

_KIND_NAMES = {Kind.COMPONENT: "component", Kind.CONNECTOR: "connector"}
_KIND_BY_NAME = {v: k for k, v in _KIND_NAMES.items()}


# -- file schema -------------------------------------------------------------


class _Doc(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True)


class RefDoc(_Doc):
    kind: Literal["component", "connector"]
    index: int


class ComponentDoc(_Doc):
    index: int
    reliability: float
    repair_ticks: int | None = None
    status: Literal["normal", "failed"] = "normal"
    critical: bool = False
    plan: list[RefDoc] = []
    knowledge: list[RefDoc] = []


class ConnectorDoc(_Doc):
    index: int
    source: int
    target: int
    reliability: float
    repair_ticks: int | None = None
    status: Literal["normal", "failed"] = "normal"
    plan: list[RefDoc] = []


class ServiceDoc(_Doc):
    id: int
    support: list[RefDoc]


class BusinessDoc(_Doc):
    id: int
    services: list[int]
    transition: list[list[float]]
    duty_cycle: float = 1.0
    critical: bool = False


class RuleDoc(_Doc):
    failed: RefDoc
    substitutes: list[RefDoc]


class ReconfigDoc(_Doc):
    id: int = 0
    policy: str = "first-fit"
    strategy: str = "priority-order"
    rules: list[RuleDoc] = []


class ModelDoc(_Doc):
    format_version: Literal[1]
    components: list[ComponentDoc]
    connectors: list[ConnectorDoc]
    services: list[ServiceDoc]
    businesses: list[BusinessDoc]
    reconfig: ReconfigDoc


def _ref(doc: RefDoc) -> AgentId:
    return AgentId(_KIND_BY_NAME[doc.kind], doc.index)


def _refs(docs) -> tuple[AgentId, ...]:
    return tuple(_ref(d) for d in docs)


def _ref_json(a: AgentId) -> dict:
    return {"kind": _KIND_NAMES[Kind(a.kind)], "index": a.index}


def from_document(doc: ModelDoc) -> SystemModel:
    return SystemModel(
        components=tuple(
            ComponentAgent(
                index=c.index,
                reliability=c.reliability,
                repair_ticks=c.repair_ticks,
                status=Status(c.status),
                behavior=BehaviorProfile(knowledge=_refs(c.knowledge), plan=_refs(c.plan), critical=c.critical),
            )
            for c in doc.components
        ),
        connectors=tuple(
            ConnectorAgent(
                index=c.index,
                source=c.source,
                target=c.target,
                reliability=c.reliability,
                repair_ticks=c.repair_ticks,
                status=Status(c.status),
                plan=_refs(c.plan),
            )
            for c in doc.connectors
        ),
        services=tuple(ServiceAgent(id=s.id, support=_refs(s.support)) for s in doc.services),
        businesses=tuple(
            BusinessAgent(
                id=b.id,
                services=tuple(b.services),
                transition=tuple(tuple(row) for row in b.transition),
                duty_cycle=b.duty_cycle,
                critical=b.critical,
            )
            for b in doc.businesses
        ),
        reconfig=ReconfigModel(
            id=doc.reconfig.id,
            policy=doc.reconfig.policy,
            strategy=doc.reconfig.strategy,
            rules=tuple(ReconfigRule(_ref(r.failed), _refs(r.substitutes)) for r in doc.reconfig.rules),
        ),
    )


def to_json_dict(model: SystemModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "components": [
            {
                "index": c.index,
                "reliability": c.reliability,
                "repair_ticks": c.repair_ticks,
                "status": c.status.value,
                "critical": c.behavior.critical,
                "plan": [_ref_json(a) for a in c.behavior.plan],
                "knowledge": [_ref_json(a) for a in c.behavior.knowledge],
            }
            for c in model.components
        ],
        "connectors": [
            {
                "index": c.index,
                "source": c.source,
                "target": c.target,
                "reliability": c.reliability,
                "repair_ticks": c.repair_ticks,
                "status": c.status.value,
                "plan": [_ref_json(a) for a in c.plan],
            }
            for c in model.connectors
        ],
        "services": [{"id": s.id, "support": [_ref_json(a) for a in s.support]} for s in model.services],
        "businesses": [
            {
                "id": b.id,
                "services": list(b.services),
                "transition": [list(row) for row in b.transition],
                "duty_cycle": b.duty_cycle,
                "critical": b.critical,
            }
            for b in model.businesses
        ],
        "reconfig": {
            "id": model.reconfig.id,
            "policy": model.reconfig.policy,
            "strategy": model.reconfig.strategy,
            "rules": [
                {"failed": _ref_json(r.failed), "substitutes": [_ref_json(a) for a in r.substitutes]}
                for r in model.reconfig.rules
            ],
        },
    }


def dumps(model: SystemModel) -> str:
    return json.dumps(to_json_dict(model), indent=1) + "\n"


def loads(text: str) -> SystemModel:
    """Parse and validate a model document.

    Raises ParseError for malformed JSON or schema mismatches, ValidationError
    for documents that parse but break model invariants.
    """
    try:
        json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"line {e.lineno}, column {e.colno}: {e.msg}") from None
    try:
        doc = ModelDoc.model_validate_json(text)
    except PydanticValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors()
        )
        raise ParseError(problems) from None
    model = from_document(doc)
    report = validate(model)
    if report:
        raise ValidationError(report)
    return model


def save(model: SystemModel, path: str | os.PathLike) -> None:
    report = validate(model)
    if report:
        raise ValidationError(report)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(model))


def load(path: str | os.PathLike) -> SystemModel:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


# -- generation --------------------------------------------------------------


@dataclass(frozen=True)
class GenParams:
    components: int = 306
    connectors: int = 459
    services: int = 40
    businesses: int = 10
    critical_fraction: float = 0.3
    substitutes_per_critical_agent: int = 4
    support_size_range: tuple[int, int] = (1, 4)
    reliability: float = 0.9999
    seed: int = 0

    def check(self) -> None:
        if self.components < 1 or self.services < 1 or self.businesses < 1:
            raise GenerationError("components, services and businesses must be positive")
        if self.connectors < 0 or self.substitutes_per_critical_agent < 0:
            raise GenerationError("connector and substitute counts must be non-negative")
        if not 0.0 <= self.critical_fraction <= 1.0:
            raise GenerationError(f"critical_fraction must be in [0, 1], got {self.critical_fraction}")
        if not 0.0 < self.reliability <= 1.0:
            raise GenerationError(f"reliability must be in (0, 1], got {self.reliability}")
        lo, hi = self.support_size_range
        if not 1 <= lo <= hi:
            raise GenerationError(f"bad support_size_range {self.support_size_range}")
        if self.connectors > 0 and self.components < 2:
            raise GenerationError("connectors need at least two components")


def _topology(p: GenParams, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Directed edges; a random spanning tree first so the graph is weakly connected when possible."""
    edges: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    for node in range(1, p.components):
        if len(edges) == p.connectors:
            break
        other = int(rng.integers(node))
        edge = (node, other) if rng.random() < 0.5 else (other, node)
        edges.append(edge)
        seen.add(edge)
    max_simple = p.components * (p.components - 1)
    while len(edges) < p.connectors:
        u, v = (int(x) for x in rng.choice(p.components, size=2, replace=False))
        if (u, v) in seen and len(seen) < max_simple:
            continue
        edges.append((u, v))
        seen.add((u, v))
    return edges


def _random_support(
    size: int, edges: list[tuple[int, int]], incident: list[list[int]], p: GenParams, rng: np.random.Generator
) -> tuple[AgentId, ...]:
    """A random walk over the undirected view of the graph, collecting nodes and edges."""
    node = int(rng.integers(p.components))
    support = [com(node)]
    used = {com(node)}
    stalls = 0
    while len(support) < size and incident[node] and stalls < 4 * size:
        e = incident[node][int(rng.integers(len(incident[node])))]
        u, v = edges[e]
        nxt = v if u == node else u
        added = False
        for agent in (con(e), com(nxt)):
            if agent not in used and len(support) < size:
                support.append(agent)
                used.add(agent)
                added = True
        stalls = 0 if added else stalls + 1
        node = nxt
    return tuple(support)


def generate(p: GenParams) -> SystemModel:
    """Random system with the requested counts; deterministic for ``p.seed``.

    Reconfiguration rules cover exactly the agents in critical-business
    closures, each with dedicated substitutes taken from agents that no
    service uses.
    """
    p.check()
    rng = np.random.default_rng(p.seed % 2**64)
    edges = _topology(p, rng)
    incident: list[list[int]] = [[] for _ in range(p.components)]
    for e, (u, v) in enumerate(edges):
        incident[u].append(e)
        incident[v].append(e)

    lo, hi = p.support_size_range
    services = tuple(
        ServiceAgent(id=k, support=_random_support(int(rng.integers(lo, hi + 1)), edges, incident, p, rng))
        for k in range(p.services)
    )

    order = rng.permutation(p.services)
    if p.services >= p.businesses:
        assigned = [sorted(int(x) for x in order[b :: p.businesses]) for b in range(p.businesses)]
    else:
        assigned = [[int(order[b % p.services])] for b in range(p.businesses)]
    n_critical = int(round(p.critical_fraction * p.businesses))
    critical = set(int(x) for x in rng.choice(p.businesses, size=n_critical, replace=False))
    businesses = tuple(
        BusinessAgent.uniform(b, assigned[b], critical=b in critical) for b in range(p.businesses)
    )

    # closures computed on a provisional model with plain agents
    bare = SystemModel(
        components=tuple(ComponentAgent(i, p.reliability) for i in range(p.components)),
        connectors=tuple(ConnectorAgent(e, u, v, p.reliability) for e, (u, v) in enumerate(edges)),
        services=services,
        businesses=businesses,
    )
    closures = {s.id: support_closure(s, bare) for s in services}
    used = set().union(*closures.values())
    critical_closure = sorted(
        set().union(*(closures[sid] for b in businesses if b.critical for sid in b.services))
    )

    rules: list[ReconfigRule] = []
    if p.substitutes_per_critical_agent > 0 and critical_closure:
        spare = {
            Kind.COMPONENT: [a for a in bare.agent_ids if a.kind == Kind.COMPONENT and a not in used],
            Kind.CONNECTOR: [a for a in bare.agent_ids if a.kind == Kind.CONNECTOR and a not in used],
        }
        for kind in spare:
            pool = spare[kind]
            spare[kind] = [pool[i] for i in rng.permutation(len(pool))]
        for agent in critical_closure:
            pool = spare[Kind(agent.kind)]
            k = p.substitutes_per_critical_agent
            if len(pool) < k:
                raise GenerationError(
                    f"not enough unused {_KIND_NAMES[Kind(agent.kind)]}s to give {agent} {k} substitute(s)"
                )
            subs, spare[Kind(agent.kind)] = tuple(pool[:k]), pool[k:]
            rules.append(ReconfigRule(agent, subs))

    plan = {r.failed: r.substitutes for r in rules}
    knowledge: dict[AgentId, list[AgentId]] = {}
    for r in rules:
        for a in (r.failed, *r.substitutes):
            knowledge.setdefault(a, []).append(r.failed)
    critical_set = set(critical_closure)

    return SystemModel(
        components=tuple(
            ComponentAgent(
                c.index,
                p.reliability,
                behavior=BehaviorProfile(
                    knowledge=tuple(knowledge.get(c.id, ())),
                    plan=plan.get(c.id, ()),
                    critical=c.id in critical_set,
                ),
            )
            for c in bare.components
        ),
        connectors=tuple(
            ConnectorAgent(c.index, c.source, c.target, p.reliability, plan=plan.get(c.id, ()))
            for c in bare.connectors
        ),
        services=services,
        businesses=businesses,
        reconfig=ReconfigModel(rules=tuple(rules)),
    )
