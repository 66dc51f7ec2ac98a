"""Forward selection of 2-way interactions for component NMA.

At every cardinality all jointly estimable subsets of the candidate pool are
fitted and the subset with the smallest Q is compared with the incumbent
model through the Q-difference test. A p-value below the threshold (0.157,
the AIC-equivalent level for one extra parameter) accepts the step.
"""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .estimator import ModelFit, fit_cnma, fit_wls, format_p, q_difference_test  # noqa: F401
from .network import Network, interaction_name, n_subnetworks, numerical_rank

log = logging.getLogger(__name__)

AIC_THRESHOLD = 0.157
TIE_TOL = 1e-10

Pair = tuple[str, str]


def candidate_interactions(net: Network) -> list[Pair]:
    """Unordered pairs of active components that co-occur in some intervention."""
    active = set(net.combination.components)
    pairs = set()
    for iv in net.interventions:
        comps = sorted(c for c in iv.components if c in active)
        pairs.update(itertools.combinations(comps, 2))
    return sorted(pairs)


def _design(net: Network, pairs: Sequence[Pair]) -> np.ndarray:
    return net.incidence @ net.combination_with(pairs).values


def is_estimable(net: Network, base: Sequence[Pair], interaction: Pair) -> bool:
    """True when adding ``interaction`` raises the rank of the design."""
    base = [tuple(sorted(p)) for p in base]
    pair = tuple(sorted(interaction))
    cmat = net.combination_with(base)
    for comp in pair:
        if comp not in cmat.components:
            return False
    col = cmat.column(pair[0]) * cmat.column(pair[1])
    if not col.any():
        return False
    X = net.incidence @ cmat.values
    return numerical_rank(np.hstack([X, (net.incidence @ col)[:, None]])) > numerical_rank(X)


@dataclass
class Candidate:
    interactions: tuple[str, ...]
    Q: float
    df: int
    p_vs_incumbent: float | None = None


@dataclass
class Step:
    cardinality: int
    candidates: list[Candidate]
    chosen: tuple[str, ...] | None
    Q_diff: float | None = None
    df_diff: int | None = None
    p_diff: float | None = None
    greedy: bool = False

    @property
    def candidates_evaluated(self) -> int:
        return len(self.candidates)


@dataclass
class SelectionTrace:
    steps: list[Step]
    final_model: ModelFit
    stopped_because: str
    threshold: float
    additive: ModelFit
    history: list[ModelFit] = field(default_factory=list)

    @property
    def selected(self) -> tuple[str, ...]:
        return self.final_model.interactions

    @property
    def label(self) -> str:
        return "+".join(self.selected) if self.selected else "additive"

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "stopped_because": self.stopped_because,
            "selected": list(self.selected),
            "additive": {"Q": self.additive.Q, "df": self.additive.df, "p": self.additive.p},
            "steps": [
                {
                    "cardinality": s.cardinality,
                    "candidates_evaluated": s.candidates_evaluated,
                    "greedy": s.greedy,
                    "candidates": [
                        {"interactions": list(c.interactions), "Q": c.Q, "df": c.df,
                         "p_vs_incumbent": c.p_vs_incumbent}
                        for c in s.candidates
                    ],
                    "chosen": list(s.chosen) if s.chosen is not None else None,
                    "Q_diff": s.Q_diff,
                    "df_diff": s.df_diff,
                    "p_diff": s.p_diff,
                }
                for s in self.steps
            ],
            "final_model": self.final_model.to_dict(),
        }

    def table(self) -> str:
        """Plain-text table: interaction, Q, df, heterogeneity p, difference p."""
        rows = [("No interaction", self.additive.Q, self.additive.df, self.additive.p, None)]
        for s in self.steps:
            for c in sorted(s.candidates, key=lambda c: (c.Q, c.interactions)):
                p_het = float(stats.chi2.sf(c.Q, c.df)) if c.df > 0 else None
                rows.append((" + ".join(c.interactions), c.Q, c.df, p_het, c.p_vs_incumbent))
        width = max(len(r[0]) for r in rows)
        out = [f"{'Interaction':<{width}}  {'Q':>8}  {'df':>4}  {'p (het)':>9}  {'p (diff)':>9}"]
        for name, q, df, ph, pd in rows:
            pd_s = format_p(pd) if pd is not None else ""
            out.append(f"{name:<{width}}  {q:8.2f}  {df:4d}  {format_p(ph):>9}  {pd_s:>9}")
        out.append(f"Selected: {self.label} (stopped: {self.stopped_because})")
        return "\n".join(out)


def _q_only(X: np.ndarray, d: np.ndarray, se: np.ndarray) -> tuple[float, int]:
    fe = fit_wls(X, d, se, 0.0)
    return fe.Q, fe.rank


def forward_select(
    net: Network,
    threshold: float = AIC_THRESHOLD,
    max_cardinality: int | None = None,
    reference: str | None = None,
    pool_cap: int = 12,
    cardinality_cap: int = 4,
) -> SelectionTrace:
    """Forward interaction selection starting from the additive model.

    Models whose rank reaches ``n - n_c`` coincide with the standard (or
    separate) NMA fit and are not treated as candidates.
    """
    additive = fit_cnma(net, reference=reference)
    ref = additive.reference
    d, se = net.effects, net.se
    saturated_rank = net.n - n_subnetworks(net)

    pool = [p for p in candidate_interactions(net) if is_estimable(net, (), p)]
    steps: list[Step] = []
    history = [additive]
    incumbent: tuple[Pair, ...] = ()
    inc_Q, inc_df = additive.Q, additive.df
    if not pool:
        return SelectionTrace(steps, additive, "no_candidates", threshold, additive, history)

    limit = len(pool) if max_cardinality is None else min(max_cardinality, len(pool))
    stop = "no_candidates"
    t = 0
    while t < limit:
        t += 1
        greedy = len(pool) > pool_cap or t > cardinality_cap
        if greedy:
            warnings.warn(
                f"candidate pool of {len(pool)} at cardinality {t} exceeds the best-subset cap; "
                "falling back to greedy supersets",
                RuntimeWarning,
                stacklevel=2,
            )
            subsets = [tuple(sorted(incumbent + (p,))) for p in pool if p not in incumbent]
        else:
            subsets = list(itertools.combinations(pool, t))

        evaluated: list[tuple[float, tuple[str, ...], int, tuple[Pair, ...]]] = []
        df_blocked = False
        for subset in subsets:
            X = _design(net, subset)
            Q, rank = _q_only(X, d, se)
            if rank != additive.rank + t:
                continue  # not jointly estimable
            df = net.m - rank
            if rank >= saturated_rank or df <= 0:
                df_blocked = True
                continue
            names = tuple(interaction_name(p) for p in subset)
            evaluated.append((Q, names, df, subset))

        if not evaluated:
            stop = "df_exhausted" if df_blocked else "no_candidates"
            steps.append(Step(t, [], None, greedy=greedy))
            break

        best_Q = min(e[0] for e in evaluated)
        ties = [e for e in evaluated if e[0] <= best_Q + TIE_TOL * max(1.0, abs(best_Q))]
        best = min(ties, key=lambda e: e[1])
        cands = []
        for Q, names, df, _ in evaluated:
            ddf = inc_df - df
            p = float(stats.chi2.sf(max(inc_Q - Q, 0.0), ddf)) if ddf > 0 else None
            cands.append(Candidate(names, Q, df, p))
        q_diff = max(inc_Q - best[0], 0.0)
        df_diff = inc_df - best[2]
        p_diff = float(stats.chi2.sf(q_diff, df_diff))
        accepted = p_diff < threshold
        steps.append(Step(t, cands, best[1] if accepted else None, q_diff, df_diff, p_diff, greedy))
        log.debug("cardinality %d: best %s Q=%.4f p=%.4g", t, best[1], best[0], p_diff)
        if not accepted:
            stop = "threshold"
            break
        incumbent = best[3]
        inc_Q, inc_df = best[0], best[2]
        history.append(fit_cnma(net, incumbent, reference=ref))
    else:
        capped = max_cardinality is not None and t >= max_cardinality and t < len(pool)
        stop = "max_cardinality" if capped else "no_candidates"

    final = history[-1]
    return SelectionTrace(steps, final, stop, threshold, additive, history)


def check_final_estimable(trace: SelectionTrace, net: Network) -> bool:
    """Every selected interaction still raises rank given the others."""
    pairs = [tuple(n.split("*")) for n in trace.selected]
    for i, p in enumerate(pairs):
        others = pairs[:i] + pairs[i + 1:]
        if not is_estimable(net, others, p):
            return False
    return True


__all__ = [
    "AIC_THRESHOLD",
    "Candidate",
    "SelectionTrace",
    "Step",
    "candidate_interactions",
    "check_final_estimable",
    "forward_select",
    "is_estimable",
    "q_difference_test",
]
