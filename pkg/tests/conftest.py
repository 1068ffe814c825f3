from dataclasses import replace

import pytest

from renass.model import (
    BusinessAgent,
    ComponentAgent,
    ConnectorAgent,
    ReconfigModel,
    ReconfigRule,
    ServiceAgent,
    SystemModel,
    com,
    con,
    support_closure,
)


def single_component(r=0.5, substitutes=0, critical=True, repair=None):
    """One business calling one service that needs component 0.

    Components 1..substitutes are hot standbys for component 0.
    """
    comps = tuple(ComponentAgent(i, r, repair_ticks=repair) for i in range(1 + substitutes))
    rules = ()
    if substitutes:
        rules = (ReconfigRule(com(0), tuple(com(i) for i in range(1, 1 + substitutes))),)
    return SystemModel(
        components=comps,
        services=(ServiceAgent(0, (com(0),)),),
        businesses=(BusinessAgent.uniform(0, [0], critical=critical),),
        reconfig=ReconfigModel(rules=rules),
    )


def chain_model():
    """A -c0-> B -c1-> E, one service over {A, c0, c1}."""
    return SystemModel(
        components=(ComponentAgent(0, 0.9), ComponentAgent(1, 0.9), ComponentAgent(2, 0.9)),
        connectors=(ConnectorAgent(0, 0, 1, 0.9), ConnectorAgent(1, 1, 2, 0.9)),
        services=(ServiceAgent(0, (com(0), con(0), con(1))),),
        businesses=(BusinessAgent.uniform(0, [0]),),
    )


@pytest.fixture
def two_component_model():
    return SystemModel(
        components=(ComponentAgent(0, 0.99), ComponentAgent(1, 0.99)),
        connectors=(ConnectorAgent(0, 0, 1, 0.99),),
        services=(ServiceAgent(0, (con(0),)),),
        businesses=(BusinessAgent.uniform(0, [0]),),
    )


def small_generated(seed=0, reliability=0.98, substitutes=1, components=12):
    """A generated model small enough to always leave spare components for substitutes."""
    from renass.scenario import GenParams, generate

    return generate(
        GenParams(
            components=components,
            connectors=components + 2,
            services=2,
            businesses=2,
            critical_fraction=0.5,
            substitutes_per_critical_agent=substitutes,
            support_size_range=(1, 2),
            reliability=reliability,
            seed=seed,
        )
    )


def random_small_model(rng, max_agents=6):
    """Random model inside both oracle domains: disjoint substitute pools drawn from unused components."""
    n_comp = int(rng.integers(2, max_agents))
    n_conn = int(rng.integers(0, min(2, max_agents - n_comp) + 1))
    comps = tuple(ComponentAgent(i, float(rng.choice([0.5, 0.7, 0.9, 0.95]))) for i in range(n_comp))
    conns = []
    for j in range(n_conn):
        source = int(rng.integers(n_comp))
        target = (source + 1 + int(rng.integers(n_comp - 1))) % n_comp  # never a self-loop
        conns.append(ConnectorAgent(j, source, target, float(rng.choice([0.6, 0.8, 0.95]))))
    conns = tuple(conns)
    # keep at least one component outside every service so there can be spares
    used_pool = [com(i) for i in range(n_comp - 1)] + [con(j) for j in range(n_conn)]
    n_services = int(rng.integers(1, 3))
    services = []
    for s in range(n_services):
        size = int(rng.integers(1, min(3, len(used_pool)) + 1))
        picks = rng.choice(len(used_pool), size=size, replace=False)
        services.append(ServiceAgent(s, tuple(used_pool[k] for k in sorted(picks))))
    n_bus = int(rng.integers(1, 3))
    businesses = []
    for b in range(n_bus):
        sids = [sv.id for sv in services]
        if len(sids) == 1:
            transition = ((1.0,),)
        else:
            p = round(float(rng.uniform(0.1, 0.9)), 3)
            q = round(float(rng.uniform(0.1, 0.9)), 3)
            transition = ((p, 1.0 - p), (q, 1.0 - q))
        businesses.append(
            BusinessAgent(b, tuple(sids), transition, duty_cycle=float(rng.choice([1.0, 0.5])), critical=bool(rng.integers(2)) or b == 0)
        )
    # support closure adds connector endpoints; spares are components no closure touches
    draft = SystemModel(comps, conns, tuple(services), tuple(businesses))
    touched = set().union(*(support_closure(sv, draft) for sv in services))
    spares = [com(i) for i in range(n_comp) if com(i) not in touched]
    rules = []
    candidates = sorted(touched)
    rng.shuffle(candidates)
    for original in candidates:
        if not spares:
            break
        same_kind = [a for a in spares if a.kind == original.kind]
        if not same_kind:
            continue
        sub = same_kind[0]
        spares.remove(sub)
        rules.append(ReconfigRule(original, (sub,)))
    return replace(draft, reconfig=ReconfigModel(rules=tuple(rules)))


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
