import itertools

import numpy as np
import pytest

from cnmasel.network import Network
from cnmasel.simulator import ScenarioConfig, generate_network, run_rng

SINGLE = ["A", "B", "C", "D", "E"]
COMBOS = ["A+B", "A+C", "B+C", "C+D", "A+D", "B+E", "A+B+C"]


def random_network(rng, n_max=8, m_max=None, connected=True, combos=True, extra_edges=None):
    """Random two-arm network over placebo, single components and combinations."""
    pool = SINGLE + (COMBOS if combos else [])
    n = int(rng.integers(3, min(n_max, len(pool) + 1) + 1))
    chosen = ["P"] + list(rng.choice(pool, size=n - 1, replace=False))
    order = list(rng.permutation(chosen))
    edges = []
    for i in range(1, len(order)):  # random spanning tree
        j = int(rng.integers(0, i))
        edges.append((order[i], order[j]))
    all_pairs = [p for p in itertools.combinations(order, 2)]
    n_extra = int(rng.integers(0, 4)) if extra_edges is None else extra_edges
    for _ in range(n_extra):
        edges.append(all_pairs[int(rng.integers(len(all_pairs)))])
    if m_max is not None:
        edges = edges[:m_max] if len(edges) > m_max else edges
    if not connected and len(order) >= 4:
        cut = int(rng.integers(1, len(edges)))
        edges = [e for i, e in enumerate(edges) if i != cut]
    records = []
    for s, (a, b) in enumerate(edges):
        records.append((f"st{s}", a, b, float(rng.normal(0, 0.5)), float(rng.uniform(0.1, 0.6))))
    return Network.from_records(records, inactive={"P"})


@pytest.fixture
def sim_net():
    return generate_network(ScenarioConfig(scenario="A"), run_rng(42, 0))


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[n])
