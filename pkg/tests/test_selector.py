import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from cnmasel.estimator import fit_cnma
from cnmasel.network import Network, read_csv
from cnmasel.selector import (
    AIC_THRESHOLD,
    candidate_interactions,
    check_final_estimable,
    forward_select,
    is_estimable,
)

from .conftest import random_network


def test_threshold_value():
    # one-df chi-square tail at the AIC penalty of 2
    assert AIC_THRESHOLD == 0.157
    assert stats.chi2.sf(2.0, 1) == pytest.approx(0.157, abs=5e-4)


def test_candidates_simulated(sim_net):
    assert candidate_interactions(sim_net) == [("A", "B"), ("A", "C"), ("C", "D")]
    for pair in candidate_interactions(sim_net):
        assert is_estimable(sim_net, (), pair)


def test_triple_combination_yields_three_pairs():
    net = Network.from_records(
        [("s1", "A+B+C", "P", 0.1, 0.2), ("s2", "A", "P", 0.1, 0.2)], inactive={"P"}
    )
    assert candidate_interactions(net) == [("A", "B"), ("A", "C"), ("B", "C")]


def test_inestimable_interaction():
    # A*B and the A+B main-effect sum are confounded when A+B is only linked to P
    net = Network.from_records(
        [
            ("s1", "A+B", "P", 0.4, 0.2), ("s2", "A", "P", 0.1, 0.2), ("s3", "B", "P", 0.2, 0.2),
            ("s4", "A+C", "P", 0.3, 0.2), ("s5", "C", "P", 0.2, 0.2),
        ],
        inactive={"P"},
    )
    assert is_estimable(net, (), ("A", "B"))
    assert not is_estimable(net, [("A", "B"), ("A", "C")], ("A", "B"))


def test_no_combinations_gives_no_candidates():
    net = Network.from_records(
        [("s1", "A", "P", 0.1, 0.2), ("s2", "B", "P", 0.2, 0.2), ("s3", "A", "B", 0.0, 0.3)],
        inactive={"P"},
    )
    trace = forward_select(net, reference="P")
    assert trace.stopped_because == "no_candidates"
    assert trace.label == "additive" and trace.steps == []


def test_threshold_zero_keeps_additive(sim_net):
    trace = forward_select(sim_net, threshold=0.0, reference="P")
    assert trace.selected == ()
    assert trace.stopped_because == "threshold"
    assert trace.final_model is trace.additive


def test_threshold_one_accepts_until_exhausted(sim_net):
    trace = forward_select(sim_net, threshold=1.0, reference="P")
    # all three interactions reach rank n - 1 and coincide with the standard NMA
    assert len(trace.selected) == 2
    assert trace.stopped_because == "df_exhausted"


def test_max_cardinality(sim_net):
    trace = forward_select(sim_net, threshold=1.0, max_cardinality=1, reference="P")
    assert len(trace.selected) == 1
    assert trace.stopped_because == "max_cardinality"


def test_q_decreases_along_path(sim_net):
    trace = forward_select(sim_net, threshold=1.0, reference="P")
    qs = [f.Q for f in trace.history]
    dfs = [f.df for f in trace.history]
    assert all(a >= b - 1e-9 for a, b in zip(qs, qs[1:]))
    assert all(a == b + 1 for a, b in zip(dfs, dfs[1:]))


def test_best_subset_is_minimum_q(sim_net):
    trace = forward_select(sim_net, threshold=1.0, reference="P")
    for step in trace.steps:
        if step.chosen is None:
            continue
        best = min(step.candidates, key=lambda c: (c.Q, c.interactions))
        assert best.interactions == step.chosen
        # enumerate the same subsets by direct fits
        for c in step.candidates:
            pairs = [tuple(n.split("*")) for n in c.interactions]
            assert fit_cnma(sim_net, pairs, "P").Q == pytest.approx(c.Q, rel=1e-9)


def test_p_diff_is_chi_square_tail(sim_net):
    trace = forward_select(sim_net, reference="P")
    s = trace.steps[0]
    assert s.p_diff == pytest.approx(stats.chi2.sf(s.Q_diff, s.df_diff))


def test_bundled_example_selects_ab():
    from importlib.resources import files

    path = files("cnmasel") / "data" / "simulated_c1.csv"
    net = read_csv(path, inactive={"P"})
    trace = forward_select(net, reference="P")
    assert trace.label == "A*B"
    assert trace.stopped_because == "threshold"
    assert trace.steps[0].p_diff < AIC_THRESHOLD
    assert trace.steps[1].p_diff >= AIC_THRESHOLD
    assert check_final_estimable(trace, net)
    text = trace.table()
    assert "No interaction" in text and "Selected: A*B" in text


def test_trace_serializes(sim_net):
    import json

    out = json.loads(json.dumps(forward_select(sim_net, reference="P").to_dict()))
    assert {"threshold", "stopped_because", "selected", "steps", "final_model"} <= set(out)


def test_greedy_fallback_warns(sim_net):
    with pytest.warns(RuntimeWarning, match="greedy"):
        trace = forward_select(sim_net, threshold=1.0, reference="P", pool_cap=2)
    assert all(s.greedy for s in trace.steps)


def test_tie_break_is_lexicographic():
    # A+B and C+D enter symmetrically: identical Q for A*B and C*D
    recs = []
    for i, (a, b, te) in enumerate(
        [("A", "P", 0.1), ("B", "P", 0.2), ("C", "P", 0.1), ("D", "P", 0.2),
         ("A+B", "P", 0.9), ("C+D", "P", 0.9), ("A", "B", -0.1), ("C", "D", -0.1),
         ("A+B", "A", 0.8), ("C+D", "C", 0.8)]
    ):
        recs.append((f"s{i}", a, b, te, 0.2))
    net = Network.from_records(recs, inactive={"P"})
    trace = forward_select(net, threshold=1.0, reference="P")
    assert trace.steps[0].chosen == ("A*B",)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_final_model_always_estimable(seed):
    net = random_network(np.random.default_rng(seed), extra_edges=3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        trace = forward_select(net, threshold=0.5, reference="P")
    assert check_final_estimable(trace, net)
    assert trace.final_model.df >= 1 or trace.selected == ()
    assert trace.stopped_because in {"threshold", "no_candidates", "df_exhausted", "max_cardinality"}
