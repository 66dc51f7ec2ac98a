"""Monte-Carlo study of CNMA model selection on a fixed 8-intervention network.

Each run draws binary two-arm trial data, fits the standard NMA (connected
mode only), the additive CNMA and the forward-selected CNMA, and records the
selected model together with squared errors and interval coverage of the
seven effects against placebo. Runs use independent Philox streams keyed by
``(seed, run index)``, so results do not depend on how runs are scheduled.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from typing import Any, Sequence

import numpy as np

from .disconnector import apply_disconnect, enumerate_disconnected, sample_disconnected
from .estimator import ModelFit, fit_cnma, fit_nma, pairwise_from_binary, q_difference_test
from .network import Comparison, Network, parse_intervention_label
from .selector import AIC_THRESHOLD, forward_select

PLACEBO = "P"
ACTIVE = ("A", "B", "C", "D", "A+B", "A+C", "C+D")
INTERVENTIONS = (PLACEBO,) + ACTIVE
SCENARIOS = ("A", "B1", "B2", "C1", "C2")
TAU2_GRID = (0.0, 0.01, 0.10)
DEFAULT_ODDS_RATIOS = {"A": 1.40, "B": 1.20, "C": 2.30, "D": 1.50}

# (interaction ratio, combination carrying it)
SCENARIO_INTERACTION = {
    "A": (1.0, None),
    "B1": (1.5, "A+B"),
    "B2": (1.5, "C+D"),
    "C1": (2.0, "A+B"),
    "C2": (2.0, "C+D"),
}

OMITTED_PAIRS = (("A", "B"), ("A", "A+B"), ("A", "C+D"), ("B", "C+D"))
DOUBLED_VS_PLACEBO = ("A", "B", "A+B", "A+C")

SELECTION_KEYS = ("additive", "A*B", "A*C", "C*D", "A*B+C*D", "A*B+A*C", "A*C+C*D")


def _n_active(label: str) -> int:
    return 0 if label == PLACEBO else len(parse_intervention_label(label).components)


def _orient(a: str, b: str) -> tuple[str, str]:
    """(treatment arm, baseline arm): baseline has fewer components, ties by label."""
    ka, kb = _n_active(a), _n_active(b)
    if (kb, b) <= (ka, a):
        return a, b
    return b, a


def default_layout() -> tuple[tuple[str, str], ...]:
    """28 two-arm studies over P, A, B, C, D, A+B, A+C, C+D."""
    omitted = {frozenset(p) for p in OMITTED_PAIRS}
    pairs = []
    for i, a in enumerate(INTERVENTIONS):
        for b in INTERVENTIONS[i + 1:]:
            if frozenset((a, b)) in omitted:
                continue
            pairs.append(_orient(a, b))
            if a == PLACEBO and b in DOUBLED_VS_PLACEBO:
                pairs.append(_orient(a, b))
    return tuple(pairs)


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "A"
    tau2: float = 0.0
    runs: int = 1000
    seed: int = 42
    mode: str = "connected"
    odds_ratios: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_ODDS_RATIOS))
    interaction_ratio: float | None = None
    baseline_p: float = 0.1
    arm_size_range: tuple[int, int] = (50, 200)
    layout: tuple[tuple[str, str], ...] = field(default_factory=default_layout)
    threshold: float = AIC_THRESHOLD
    max_cardinality: int | None = None
    level: float = 0.95
    inestimable: str = "drop"

    def __post_init__(self):
        if self.scenario not in SCENARIO_INTERACTION:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.mode not in ("connected", "disconnected"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0 < self.baseline_p < 1:
            raise ValueError("baseline_p must lie in (0, 1)")
        lo, hi = self.arm_size_range
        if int(lo) != lo or int(hi) != hi or not 1 <= lo <= hi:
            raise ValueError("arm_size_range must be integers with 1 <= low <= high")
        if self.tau2 < 0:
            raise ValueError("tau2 must be non-negative")
        if self.inestimable not in ("drop", "miss"):
            raise ValueError("inestimable must be 'drop' or 'miss'")
        object.__setattr__(self, "layout", tuple(tuple(p) for p in self.layout))
        object.__setattr__(self, "arm_size_range", (int(lo), int(hi)))

    @property
    def ratio(self) -> float:
        default, _ = SCENARIO_INTERACTION[self.scenario]
        if self.interaction_ratio is None or self.scenario == "A":
            return default
        return self.interaction_ratio

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScenarioConfig":
        data = dict(data)
        overrides = data.pop("overrides", {}) or {}
        data.update(overrides)
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "layout" in data:
            data["layout"] = tuple(tuple(p) for p in data["layout"])
        if "arm_size_range" in data:
            data["arm_size_range"] = tuple(data["arm_size_range"])
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["layout"] = [list(p) for p in self.layout]
        out["arm_size_range"] = list(self.arm_size_range)
        return out


def true_effects(config: ScenarioConfig) -> dict[str, float]:
    """True log odds ratios of the seven active interventions vs placebo."""
    single = {k: math.log(v) for k, v in config.odds_ratios.items()}
    _, target = SCENARIO_INTERACTION[config.scenario]
    out = dict(single)
    for combo in ("A+B", "A+C", "C+D"):
        comps = parse_intervention_label(combo).components
        out[combo] = sum(single[c] for c in comps)
        if combo == target:
            out[combo] += math.log(config.ratio)
    return {k: out[k] for k in ACTIVE}


def arm_probability(d_vs_placebo: float, baseline_p: float = 0.1) -> float:
    """Event probability for an arm with log odds ratio ``d_vs_placebo`` vs placebo."""
    e = math.exp(d_vs_placebo)
    return baseline_p * e / (1 - baseline_p * (1 - e))


@dataclass(frozen=True)
class ArmData:
    study: str
    treat1: str
    event1: int
    n1: int
    treat2: str
    event2: int
    n2: int


def generate_arms(config: ScenarioConfig, rng: np.random.Generator) -> list[ArmData]:
    truth = {PLACEBO: 0.0, **true_effects(config)}
    lo, hi = config.arm_size_range
    sd = math.sqrt(config.tau2)
    arms = []
    width = len(str(len(config.layout)))
    for i, (t1, t2) in enumerate(config.layout, start=1):
        mean = truth[t1] - truth[t2]
        d = rng.normal(mean, sd) if sd > 0 else mean
        p2 = arm_probability(truth[t2], config.baseline_p)
        p1 = arm_probability(truth[t2] + d, config.baseline_p)
        n = int(rng.integers(lo, hi + 1))
        e1 = int(rng.binomial(n, p1))
        e2 = int(rng.binomial(n, p2))
        arms.append(ArmData(f"s{i:0{width}d}", t1, e1, n, t2, e2, n))
    return arms


def network_from_arms(arms: Sequence[ArmData]) -> Network:
    comps = []
    for a in arms:
        te, se = pairwise_from_binary(a.event1, a.n1, a.event2, a.n2)
        comps.append(
            Comparison(a.study, parse_intervention_label(a.treat1), parse_intervention_label(a.treat2), te, se)
        )
    return Network(tuple(comps), frozenset({PLACEBO}), INTERVENTIONS)


def generate_network(config: ScenarioConfig, rng: np.random.Generator) -> Network:
    return network_from_arms(generate_arms(config, rng))


def run_rng(seed: int, run: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, run])))


@lru_cache(maxsize=32)
def _designs_for_layout(layout: tuple[tuple[str, str], ...]):
    arms = [ArmData(f"s{i}", t1, 1, 10, t2, 1, 10) for i, (t1, t2) in enumerate(layout)]
    net = network_from_arms(arms)
    return net.studies, tuple(enumerate_disconnected(net, PLACEBO))


def _study_index_designs(net: Network, layout) -> list:
    # designs are structural: enumerate once per layout and relabel study ids
    template_ids, designs = _designs_for_layout(layout)
    relabel = dict(zip(template_ids, net.studies))
    out = []
    for d in designs:
        out.append(replace(d, removed_studies=tuple(sorted(relabel[s] for s in d.removed_studies))))
    return out


@dataclass
class RunResult:
    run: int
    selected: str
    q_diff_significant: bool | None
    errors: dict[str, list[float]]  # model -> squared errors (nan if inestimable)
    covered: dict[str, list[float]]  # model -> 1/0 (nan if inestimable)
    tau2: dict[str, float]
    design_id: int | None = None


def _score(fit: ModelFit, truth: dict[str, float]) -> tuple[list[float], list[float]]:
    errs, cov = [], []
    for t in ACTIVE:
        e = fit.effect(t, PLACEBO)
        if not e.estimable:
            errs.append(math.nan)
            cov.append(math.nan)
            continue
        errs.append((e.estimate - truth[t]) ** 2)
        cov.append(1.0 if e.low <= truth[t] <= e.high else 0.0)
    return errs, cov


def run_once(config: ScenarioConfig, run: int) -> RunResult:
    rng = run_rng(config.seed, run)
    net = generate_network(config, rng)
    truth = true_effects(config)
    fits: dict[str, ModelFit] = {}
    sig = None
    design_id = None
    if config.mode == "connected":
        fits["nma"] = fit_nma(net, PLACEBO, config.level)
        fits["additive"] = fit_cnma(net, reference=PLACEBO, level=config.level)
        sig = q_difference_test(fits["additive"], fits["nma"]).p < 0.05
    else:
        design = sample_disconnected(_study_index_designs(net, config.layout), rng)
        design_id = design.id
        net = apply_disconnect(net, design)
        fits["additive"] = fit_cnma(net, reference=PLACEBO, level=config.level)
    trace = forward_select(net, config.threshold, config.max_cardinality, PLACEBO)
    fits["selected"] = trace.final_model
    if trace.final_model.level != config.level:
        fits["selected"] = fit_cnma(net, trace.selected, PLACEBO, config.level)
    errors, covered = {}, {}
    for name, fit in fits.items():
        errors[name], covered[name] = _score(fit, truth)
    return RunResult(run, trace.label, sig, errors, covered,
                     {k: f.tau2 for k, f in fits.items()}, design_id)


def _run_chunk(args):
    config, runs = args
    return [run_once(config, r) for r in runs]


def run_many(config: ScenarioConfig, jobs: int = 1) -> list[RunResult]:
    runs = list(range(config.runs))
    if jobs <= 1:
        return [run_once(config, r) for r in runs]
    chunks = [runs[i::jobs] for i in range(jobs)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(_run_chunk, [(config, c) for c in chunks if c]))
    return sorted((r for part in parts for r in part), key=lambda r: r.run)


def mse_summary(errors: Sequence[Sequence[float]]) -> float:
    """Average over runs of the mean squared error over estimable effects."""
    per_run = []
    for row in errors:
        vals = [v for v in row if not math.isnan(v)]
        if vals:
            per_run.append(math.fsum(vals) / len(vals))
    return math.fsum(per_run) / len(per_run) if per_run else math.nan


def coverage_summary(covered: Sequence[Sequence[float]], inestimable: str = "drop") -> float:
    """Average over runs of the fraction of intervals covering the truth.

    With ``inestimable="miss"`` inestimable effects count as non-covering
    instead of being dropped from the run's denominator.
    """
    per_run = []
    for row in covered:
        if inestimable == "miss":
            vals = [0.0 if math.isnan(v) else v for v in row]
        else:
            vals = [v for v in row if not math.isnan(v)]
        if vals:
            per_run.append(math.fsum(vals) / len(vals))
    return math.fsum(per_run) / len(per_run) if per_run else math.nan


def monte_carlo_limits(runs: int, level: float = 0.95) -> tuple[float, float]:
    half = 1.959963984540054 * math.sqrt(level * (1 - level) / runs)
    return round(max(level - half, 0.0), 3), round(min(level + half, 1.0), 3)


@dataclass
class SimulationSummary:
    config: ScenarioConfig
    selection_counts: dict[str, int]
    n_diff: int | None
    mse: dict[str, dict[str, Any]]
    cp: dict[str, dict[str, Any]]
    monte_carlo_limits: tuple[float, float]
    inestimable_counts: dict[str, int]
    mean_tau2: dict[str, float]
    design_counts: dict[int, int] = field(default_factory=dict)

    @property
    def runs(self) -> int:
        return self.config.runs

    def fraction(self, key: str) -> float:
        return self.selection_counts.get(key, 0) / self.runs

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config.to_dict(),
            "selection_counts": self.selection_counts,
            "n_diff": self.n_diff,
            "mse": self.mse,
            "cp": self.cp,
            "monte_carlo_limits": list(self.monte_carlo_limits),
            "inestimable_counts": self.inestimable_counts,
            "mean_tau2": self.mean_tau2,
            "design_counts": {str(k): v for k, v in sorted(self.design_counts.items())},
        }


def summarize(config: ScenarioConfig, results: Sequence[RunResult]) -> SimulationSummary:
    results = sorted(results, key=lambda r: r.run)
    counts = {k: 0 for k in SELECTION_KEYS}
    for r in results:
        counts[r.selected] = counts.get(r.selected, 0) + 1
    n_diff = None
    if config.mode == "connected":
        n_diff = sum(1 for r in results if r.q_diff_significant)
    limits = monte_carlo_limits(len(results), config.level)
    models = list(results[0].errors) if results else []
    mse, cp, inest, tau = {}, {}, {}, {}
    for model in models:
        errs = [r.errors[model] for r in results]
        covs = [r.covered[model] for r in results]
        per_cmp_mse, per_cmp_cp = {}, {}
        for j, t in enumerate(ACTIVE):
            e = [row[j] for row in errs if not math.isnan(row[j])]
            c = [row[j] for row in covs if not math.isnan(row[j])]
            per_cmp_mse[t] = math.fsum(e) / len(e) if e else None
            per_cmp_cp[t] = math.fsum(c) / len(c) if c else None
        avg_cp = coverage_summary(covs, config.inestimable)
        mse[model] = {"average": mse_summary(errs), "per_comparison": per_cmp_mse}
        cp[model] = {
            "average": avg_cp,
            "per_comparison": per_cmp_cp,
            "within_limits": bool(limits[0] <= avg_cp <= limits[1]),
        }
        inest[model] = sum(1 for row in errs for v in row if math.isnan(v))
        tau[model] = math.fsum(r.tau2[model] for r in results) / len(results)
    designs: dict[int, int] = {}
    for r in results:
        if r.design_id is not None:
            designs[r.design_id] = designs.get(r.design_id, 0) + 1
    return SimulationSummary(config, counts, n_diff, mse, cp, limits, inest, tau, designs)


def run_scenario(config: ScenarioConfig, jobs: int = 1) -> SimulationSummary:
    return summarize(config, run_many(config, jobs))


def selection_table_rows(summaries: Sequence[SimulationSummary]) -> list[dict[str, Any]]:
    """Selection counts: one row per scenario, one column per selected model."""
    keys = list(SELECTION_KEYS)
    for s in summaries:
        keys += [k for k in s.selection_counts if k not in keys]
    rows = []
    for s in summaries:
        row = {"scenario": s.config.scenario, "tau2": s.config.tau2, "mode": s.config.mode,
               "runs": s.runs, "n_diff": "" if s.n_diff is None else s.n_diff}
        row.update({k: s.selection_counts.get(k, 0) for k in keys})
        rows.append(row)
    return rows


def performance_rows(summaries: Sequence[SimulationSummary]) -> list[dict[str, Any]]:
    """Long-format scenario x model x tau2 rows with average MSE and CP."""
    rows = []
    for s in summaries:
        for model in s.mse:
            rows.append({
                "scenario": s.config.scenario,
                "tau2": s.config.tau2,
                "mode": s.config.mode,
                "model": model,
                "mse": s.mse[model]["average"],
                "cp": s.cp[model]["average"],
                "cp_lower": s.monte_carlo_limits[0],
                "cp_upper": s.monte_carlo_limits[1],
            })
    return rows
