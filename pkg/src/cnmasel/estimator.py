"""Weighted least squares fits of NMA and component NMA models.

All fits go through :func:`fit_wls`, which solves the weighted problem with an
SVD-based pseudoinverse so rank-deficient component designs are handled the
same way as full-rank ones. Heterogeneity statistics (Q, df, p) are always
taken from the common-effect stage; estimates and intervals use the
random-effects weights with the moment estimate of tau^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy import stats

from .network import (
    DegreesOfFreedomError,
    Network,
    connectivity,
    interaction_name,
    n_subnetworks,
    parse_interaction,
)

EPS = np.finfo(float).eps
ESTIMABLE_TOL = 1e-8


class ModelError(ValueError):
    """Requested model cannot be fitted to the given network."""


class DisconnectedNetworkError(ModelError):
    pass


def pairwise_from_binary(e1: float, n1: float, e2: float, n2: float) -> tuple[float, float]:
    """Log odds ratio of arm 1 vs arm 2 and its standard error.

    If any cell is zero (no events or all events in an arm), 0.5 is added to
    all four cells.
    """
    for e, n in ((e1, n1), (e2, n2)):
        if n <= 0:
            raise ValueError("arm size must be positive")
        if e < 0 or e > n:
            raise ValueError(f"events ({e}) must lie in [0, {n}]")
    a, b = float(e1), float(n1 - e1)
    c, d = float(e2), float(n2 - e2)
    if min(a, b, c, d) == 0:
        a, b, c, d = a + 0.5, b + 0.5, c + 0.5, d + 0.5
    te = math.log(a * d) - math.log(c * b)
    se = math.sqrt(1 / a + 1 / b + 1 / c + 1 / d)
    return te, se


def confidence_interval(estimate: float, se: float, level: float = 0.95) -> tuple[float, float]:
    if not 0 < level < 1:
        raise ValueError("level must lie strictly between 0 and 1")
    if not se > 0:
        raise ValueError("se must be positive")
    z = stats.norm.ppf(1 - (1 - level) / 2)
    return estimate - z * se, estimate + z * se


def format_p(p: float | None) -> str:
    if p is None:
        return "n/a"
    if p < 1e-4:
        return "< 0.0001"
    return f"{p:.4f}"


@dataclass(frozen=True)
class WLSFit:
    beta: np.ndarray
    delta: np.ndarray
    cov_beta: np.ndarray
    cov_delta: np.ndarray
    Q: float
    rank: int
    weights: np.ndarray
    rowspace: np.ndarray  # orthonormal basis (rank x p) of the design row space


def fit_wls(X: np.ndarray, d: np.ndarray, se: np.ndarray, tau2: float = 0.0) -> WLSFit:
    X = np.asarray(X, dtype=float)
    d = np.asarray(d, dtype=float)
    se = np.asarray(se, dtype=float)
    if X.shape[0] != d.shape[0] or d.shape != se.shape:
        raise ValueError("design, effects and standard errors disagree in length")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(d)) and np.all(np.isfinite(se))):
        raise ValueError("non-finite input to weighted least squares")
    if np.any(se <= 0) or tau2 < 0 or not math.isfinite(tau2):
        raise ValueError("standard errors must be positive and tau2 non-negative")

    w = 1.0 / (se**2 + tau2)
    sw = np.sqrt(w)
    Xw = X * sw[:, None]
    if Xw.size == 0:
        p = X.shape[1]
        return WLSFit(np.zeros(p), np.zeros(len(d)), np.zeros((p, p)), np.zeros((len(d),) * 2),
                      float(np.sum(w * d**2)), 0, w, np.zeros((0, p)))
    U, s, Vt = np.linalg.svd(Xw, full_matrices=False)
    tol = max(Xw.shape) * EPS * (s[0] if s.size else 0.0)
    r = int(np.sum(s > tol))
    U, s, Vt = U[:, :r], s[:r], Vt[:r]
    beta = Vt.T @ ((U.T @ (d * sw)) / s)
    cov_beta = (Vt.T / s**2) @ Vt
    delta = X @ beta
    cov_delta = X @ cov_beta @ X.T
    resid = d - delta
    Q = float(np.sum(w * resid**2))
    return WLSFit(beta, delta, cov_beta, cov_delta, Q, r, w, Vt)


def estimate_tau2(X: np.ndarray, d: np.ndarray, se: np.ndarray, fe: WLSFit | None = None) -> float:
    """Moment estimator of the common between-study variance (clamped at 0)."""
    X = np.asarray(X, dtype=float)
    fe = fit_wls(X, d, se, 0.0) if fe is None else fe
    df = len(d) - fe.rank
    if df <= 0:
        return 0.0
    w = fe.weights
    denom = float(np.sum(w) - np.trace(fe.cov_beta @ (X.T * w**2) @ X))
    if denom <= 0:
        return 0.0
    return max(0.0, (fe.Q - df) / denom)


class Effect(NamedTuple):
    treat1: str
    treat2: str
    estimate: float | None
    se: float | None
    low: float | None
    high: float | None
    estimable: bool


@dataclass
class ModelFit:
    kind: str
    columns: tuple[str, ...]
    interventions: tuple[str, ...]
    reference: str
    combination: np.ndarray
    X: np.ndarray
    d: np.ndarray
    beta: np.ndarray
    theta: np.ndarray
    delta: np.ndarray
    cov_delta: np.ndarray
    cov_beta: np.ndarray
    Q: float
    df: int
    p: float | None
    tau2: float
    rank: int
    weights_fe: np.ndarray
    rowspace: np.ndarray
    interactions: tuple[str, ...] = ()
    level: float = 0.95
    n_subnetworks: int = 1
    _z: float = field(init=False, repr=False)

    def __post_init__(self):
        self._z = float(stats.norm.ppf(1 - (1 - self.level) / 2))

    def contrast(self, treat1: str, treat2: str) -> np.ndarray:
        i, j = self.interventions.index(treat1), self.interventions.index(treat2)
        return self.combination[i] - self.combination[j]

    def is_estimable(self, a: np.ndarray) -> bool:
        a = np.asarray(a, dtype=float)
        resid = a - (a @ self.rowspace.T) @ self.rowspace
        return bool(np.linalg.norm(resid) <= ESTIMABLE_TOL * max(1.0, np.linalg.norm(a)))

    def effect(self, treat1: str, treat2: str | None = None) -> Effect:
        """Relative effect ``treat1`` vs ``treat2`` (default: the reference)."""
        treat2 = self.reference if treat2 is None else treat2
        a = self.contrast(treat1, treat2)
        if not self.is_estimable(a):
            return Effect(treat1, treat2, None, None, None, None, False)
        est = float(a @ self.beta)
        var = float(a @ self.cov_beta @ a)
        se = math.sqrt(max(var, 0.0))
        return Effect(treat1, treat2, est, se, est - self._z * se, est + self._z * se, True)

    def effects(self) -> list[Effect]:
        return [self.effect(t) for t in self.interventions if t != self.reference]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "columns": list(self.columns),
            "interactions": list(self.interactions),
            "reference": self.reference,
            "beta": [float(b) for b in self.beta],
            "theta": [float(t) for t in self.theta],
            "Q": self.Q,
            "df": self.df,
            "p": self.p,
            "tau2": self.tau2,
            "rank": self.rank,
            "n_subnetworks": self.n_subnetworks,
            "effects": [e._asdict() for e in self.effects()],
        }


def _chi2_sf(q: float, df: int) -> float | None:
    if df <= 0:
        return None
    return float(stats.chi2.sf(q, df))


def fit_model(
    net: Network,
    combination: np.ndarray,
    columns: Sequence[str],
    reference: str,
    kind: str,
    interactions: Sequence[str] = (),
    level: float = 0.95,
    tau2: float | None = None,
) -> ModelFit:
    """Fit ``d = B C beta`` by WLS; shared engine behind every model kind."""
    reference = net.canonical(reference)
    if reference not in net.labels:
        raise ModelError(f"reference {reference!r} not in network")
    C = np.asarray(combination, dtype=float)
    X = net.incidence @ C
    d, se = net.effects, net.se
    fe = fit_wls(X, d, se, 0.0)
    df = net.m - fe.rank
    if df < 0:
        raise DegreesOfFreedomError(f"negative degrees of freedom ({df})")
    t2 = estimate_tau2(X, d, se, fe) if tau2 is None else tau2
    re = fe if t2 == 0 else fit_wls(X, d, se, t2)
    return ModelFit(
        kind=kind,
        columns=tuple(columns),
        interventions=net.labels,
        reference=reference,
        combination=C,
        X=X,
        d=d,
        beta=re.beta,
        theta=C @ re.beta,
        delta=re.delta,
        cov_delta=re.cov_delta,
        cov_beta=re.cov_beta,
        Q=fe.Q,
        df=df,
        p=_chi2_sf(fe.Q, df),
        tau2=t2,
        rank=fe.rank,
        weights_fe=fe.weights,
        rowspace=fe.rowspace,
        interactions=tuple(interactions),
        level=level,
        n_subnetworks=n_subnetworks(net),
    )


def cochran_q(fit: ModelFit) -> tuple[float, int, float | None]:
    if fit.df < 0:
        raise DegreesOfFreedomError("negative degrees of freedom")
    return fit.Q, fit.df, fit.p


def nma_combination(net: Network, reference: str) -> tuple[np.ndarray, tuple[str, ...]]:
    ref = net.canonical(reference)
    cols = tuple(l for l in net.labels if l != ref)
    C = np.zeros((net.n, len(cols)))
    for j, l in enumerate(cols):
        C[net.labels.index(l), j] = 1.0
    return C, cols


def fit_nma(net: Network, reference: str, level: float = 0.95) -> ModelFit:
    """Standard NMA relative to ``reference``; refuses disconnected networks."""
    if n_subnetworks(net) > 1:
        raise DisconnectedNetworkError(
            "network is disconnected; fit subnetworks separately (fit_separate_nmas)"
        )
    C, cols = nma_combination(net, reference)
    return fit_model(net, C, cols, reference, "nma", level=level)


@dataclass
class SeparateFit:
    fits: list[ModelFit]
    subnetworks: list[list[str]]
    Q: float
    df: int
    p: float | None


def fit_separate_nmas(net: Network, reference: str, level: float = 0.95) -> SeparateFit:
    """One NMA per subnetwork; Q and df are summed across subnetworks."""
    parts = connectivity(net, reference)
    fits = []
    for part in parts:
        members = set(part)
        sub = net.subset(c.study_id for c in net.comparisons if c.treat1.label in members)
        ref = net.canonical(reference)
        fits.append(fit_nma(sub, ref if ref in members else part[0], level))
    Q = float(sum(f.Q for f in fits))
    df = int(sum(f.df for f in fits))
    return SeparateFit(fits, parts, Q, df, _chi2_sf(Q, df))


def fit_cnma(
    net: Network,
    interactions: Iterable[Sequence[str] | str] = (),
    reference: str | None = None,
    level: float = 0.95,
) -> ModelFit:
    """Additive component NMA, extended by any 2-way ``interactions``."""
    pairs = [parse_interaction(p) if isinstance(p, str) else tuple(sorted(p)) for p in interactions]
    cmat = net.combination_with(pairs)
    for name in cmat.interactions:
        if not cmat.column(name).any():
            raise ModelError(f"interaction {name} never occurs in the network (inestimable)")
    if reference is None:
        reference = _default_reference(net)
    names = tuple(interaction_name(p) for p in pairs)
    kind = "cnma" if names else "additive"
    return fit_model(net, cmat.values, cmat.columns, reference, kind, names, level)


def _default_reference(net: Network) -> str:
    for iv in net.interventions:
        if set(iv.components) <= net.inactive:
            return iv.label
    return net.labels[0]


class DifferenceTest(NamedTuple):
    Q: float
    df: int
    p: float


def _column_space_contains(big: np.ndarray, small: np.ndarray) -> bool:
    from .network import numerical_rank

    return numerical_rank(np.hstack([big, small])) == numerical_rank(big)


def q_difference_test(sparse: ModelFit, rich: ModelFit, check_nested: bool = True) -> DifferenceTest:
    """Chi-square test of ``Q_sparse - Q_rich`` on ``df_sparse - df_rich``."""
    if sparse.d.shape != rich.d.shape or not np.array_equal(sparse.d, rich.d):
        raise ModelError("models were fitted to different data")
    if check_nested and not _column_space_contains(rich.X, sparse.X):
        raise ModelError("sparse model is not nested in the rich model")
    ddf = sparse.df - rich.df
    if ddf <= 0:
        raise ModelError("no degrees of freedom to test (df difference must be positive)")
    qd = sparse.Q - rich.Q
    if qd < 0:
        if qd < -1e-9 * max(1.0, sparse.Q):
            raise ModelError("rich model has larger Q than the sparse model")
        qd = 0.0
    return DifferenceTest(qd, ddf, float(stats.chi2.sf(qd, ddf)))
