"""Rule storage and instantaneous substitution of failed agents.

An agent is reconfigurable when it has a rule *and* sits in the support
closure of a service used by a critical business. When such an agent (or the
substitute standing in for it) is Failed, the first Normal, unoccupied
substitute in rule order is bound in its place during the same tick. Once the
original is usable again the binding reverts and the substitute is released.

Two implementations share these semantics: :func:`reconfigure` works on a
:class:`BindingTable` for a single system and is the readable reference;
:class:`CompiledReconfig` applies the same steps to numpy state with one row
per replication and is what the engine runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping, NamedTuple

import numpy as np

from .errors import RuleMissingError, UnknownAgentError
from .model import (
    AgentId,
    ReconfigModel,
    ReconfigRule,
    Status,
    SystemModel,
    support_closure,
)

__all__ = [
    "BindingTable",
    "CompiledReconfig",
    "ReconfigModel",
    "ReconfigRule",
    "SubstitutionEvent",
    "critical_agents",
    "find_substitute",
    "is_reconfigurable",
    "reconfigurable_rules",
    "reconfigure",
]


class SubstitutionEvent(NamedTuple):
    tick: int
    original: AgentId
    old: AgentId
    new: AgentId

    @property
    def action(self) -> str:
        return "SubstituteOut" if self.new == self.original else "SubstituteIn"


class BindingTable(Mapping[AgentId, AgentId]):
    """Original agent -> agent currently performing its function.

    Lookups of agents without an explicit binding return the agent itself.
    """

    def __init__(self, bindings: Mapping[AgentId, AgentId] | None = None):
        self._bound = {k: v for k, v in (bindings or {}).items() if k != v}

    def __getitem__(self, agent: AgentId) -> AgentId:
        return self._bound.get(agent, agent)

    def __iter__(self) -> Iterator[AgentId]:
        return iter(self._bound)

    def __len__(self) -> int:
        return len(self._bound)

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}->{v}" for k, v in sorted(self._bound.items()))
        return f"BindingTable({inner})"

    def holder_of(self, substitute: AgentId) -> AgentId | None:
        """The original that ``substitute`` currently stands in for, if any."""
        for original, bound in self._bound.items():
            if bound == substitute:
                return original
        return None

    def rebind(self, original: AgentId, target: AgentId) -> BindingTable:
        new = dict(self._bound)
        if target == original:
            new.pop(original, None)
        else:
            new[original] = target
        return BindingTable(new)


def critical_agents(model: SystemModel) -> frozenset[AgentId]:
    """Union of support closures over every service of every critical business."""
    out: set[AgentId] = set()
    for business in model.businesses:
        if business.critical:
            for sid in business.services:
                out |= support_closure(sid, model)
    return frozenset(out)


def is_reconfigurable(agent: AgentId, model: SystemModel) -> bool:
    if agent not in model.agents:
        raise UnknownAgentError(agent)
    return model.reconfig.rule_for(agent) is not None and agent in critical_agents(model)


def reconfigurable_rules(model: SystemModel) -> list[ReconfigRule]:
    """Rules whose failed agent is reconfigurable, in ascending agent order."""
    critical = critical_agents(model)
    rules = [r for r in model.reconfig.rules if r.failed in critical]
    return sorted(rules, key=lambda r: r.failed)


def _usable(agent: AgentId, statuses: Mapping[AgentId, Status], in_pm: frozenset[AgentId]) -> bool:
    return statuses.get(agent, Status.NORMAL) is Status.NORMAL and agent not in in_pm


def find_substitute(
    failed: AgentId,
    bindings: BindingTable,
    statuses: Mapping[AgentId, Status],
    rules: ReconfigModel | SystemModel,
    in_pm: frozenset[AgentId] = frozenset(),
) -> AgentId | None:
    """First substitute in rule order that is Normal and not standing in for another agent."""
    if isinstance(rules, SystemModel):
        rules = rules.reconfig
    rule = rules.rule_for(failed)
    if rule is None:
        raise RuleMissingError(failed)
    for sub in rule.substitutes:
        holder = bindings.holder_of(sub)
        if holder is not None and holder != failed:
            continue
        if _usable(sub, statuses, in_pm):
            return sub
    return None


def reconfigure(
    bindings: BindingTable,
    statuses: Mapping[AgentId, Status],
    model: SystemModel,
    tick: int = 0,
    in_pm: frozenset[AgentId] = frozenset(),
) -> tuple[BindingTable, list[SubstitutionEvent]]:
    """One reconfiguration pass: revert recovered originals, then rebind failed ones."""
    rules = reconfigurable_rules(model)
    events: list[SubstitutionEvent] = []

    for rule in rules:
        original = rule.failed
        current = bindings[original]
        if current != original and _usable(original, statuses, in_pm):
            bindings = bindings.rebind(original, original)
            events.append(SubstitutionEvent(tick, original, current, original))

    for rule in rules:
        original = rule.failed
        current = bindings[original]
        if statuses.get(current, Status.NORMAL) is not Status.FAILED:
            continue
        if current != original:
            # the failed substitute is released before the search
            bindings = bindings.rebind(original, original)
        sub = find_substitute(original, bindings, statuses, model.reconfig, in_pm)
        new = original if sub is None else sub
        if new != original:
            bindings = bindings.rebind(original, new)
        if new != current:
            events.append(SubstitutionEvent(tick, original, current, new))

    return bindings, events


@dataclass
class CompiledReconfig:
    """Reconfigurable rules as column indices into the engine's agent arrays."""

    originals: np.ndarray  # (k,) ascending columns
    substitutes: list[np.ndarray]

    @classmethod
    def from_model(cls, model: SystemModel, column: Mapping[AgentId, int]) -> CompiledReconfig:
        rules = reconfigurable_rules(model)
        return cls(
            originals=np.array([column[r.failed] for r in rules], dtype=np.intp),
            substitutes=[np.array([column[s] for s in r.substitutes], dtype=np.intp) for r in rules],
        )

    @classmethod
    def empty(cls) -> CompiledReconfig:
        return cls(originals=np.zeros(0, dtype=np.intp), substitutes=[])

    def __len__(self) -> int:
        return len(self.originals)

    def apply(
        self,
        bind: np.ndarray,
        holder: np.ndarray,
        failed: np.ndarray,
        usable: np.ndarray,
        events: list | None = None,
    ) -> bool:
        """Run one pass in place over every replication row.

        ``bind[r, j]`` is the column serving original ``j``; ``holder[r, s]`` is
        the original that substitute ``s`` stands in for, or -1. Appends
        ``(row, original, old, new)`` tuples to ``events`` when given. Returns
        whether any binding changed.
        """
        if not len(self.originals):
            return False
        changed = False
        rows_all = np.arange(bind.shape[0])
        cols = self.originals

        current = bind[:, cols]
        revert = (current != cols) & usable[:, cols]
        if revert.any():
            changed = True
            for k in np.flatnonzero(revert.any(axis=0)):
                j = cols[k]
                rows = np.flatnonzero(revert[:, k])
                old = bind[rows, j]
                holder[rows, old] = -1
                bind[rows, j] = j
                if events is not None:
                    events.extend(zip(rows.tolist(), [int(j)] * len(rows), old.tolist(), [int(j)] * len(rows)))

        current = bind[:, cols]
        need = failed[rows_all[:, None], current]
        if not need.any():
            return changed
        changed = True
        for k in np.flatnonzero(need.any(axis=0)):
            j = cols[k]
            rows = np.flatnonzero(need[:, k])
            old = bind[rows, j]
            released = old != j
            holder[rows[released], old[released]] = -1
            new = np.full(len(rows), j, dtype=bind.dtype)
            open_ = np.ones(len(rows), dtype=bool)
            for s in self.substitutes[k]:
                take = open_ & usable[rows, s] & (holder[rows, s] < 0)
                new[take] = s
                open_ &= ~take
            bound = new != j
            holder[rows[bound], new[bound]] = j
            bind[rows, j] = new
            if events is not None:
                moved = new != old
                events.extend(
                    zip(
                        rows[moved].tolist(),
                        [int(j)] * int(moved.sum()),
                        old[moved].tolist(),
                        new[moved].tolist(),
                    )
                )
        return changed
