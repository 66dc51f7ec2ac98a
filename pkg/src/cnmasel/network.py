"""Treatment networks, component parsing, design matrices and connectivity."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

COMPONENT_SEP = "+"
INTERACTION_SEP = "*"


class NetworkError(ValueError):
    """Invalid network input (bad labels, multi-arm studies, malformed CSV)."""


class DegreesOfFreedomError(ValueError):
    """Model has more parameters than the data can identify."""


@dataclass(frozen=True, order=True)
class Intervention:
    label: str
    components: tuple[str, ...]

    def __str__(self) -> str:
        return self.label


def parse_intervention_label(label: str, separator: str = COMPONENT_SEP) -> Intervention:
    """Split ``label`` into components and return the canonical intervention.

    Components are trimmed and sorted, so ``"B+A"`` and ``"A+B"`` are the
    same intervention with label ``"A+B"``.
    """
    if not separator:
        raise NetworkError("component separator must be non-empty")
    if not label or not label.strip():
        raise NetworkError("empty intervention label")
    parts = [p.strip() for p in label.split(separator)]
    if any(not p for p in parts):
        raise NetworkError(f"empty component in label {label!r}")
    if len(set(parts)) != len(parts):
        raise NetworkError(f"duplicate component in label {label!r}")
    comps = tuple(sorted(parts))
    return Intervention(separator.join(comps), comps)


def interaction_name(pair: Sequence[str], sep: str = INTERACTION_SEP) -> str:
    a, b = sorted(pair)
    return f"{a}{sep}{b}"


def parse_interaction(name: str, sep: str = INTERACTION_SEP) -> tuple[str, str]:
    parts = [p.strip() for p in name.split(sep)]
    if len(parts) != 2 or not all(parts):
        raise NetworkError(f"interaction {name!r} must name exactly two components")
    if parts[0] == parts[1]:
        raise NetworkError(f"interaction {name!r} pairs a component with itself")
    a, b = sorted(parts)
    return a, b


@dataclass(frozen=True)
class Comparison:
    study_id: str
    treat1: Intervention
    treat2: Intervention
    effect: float
    se: float

    def __post_init__(self):
        if self.treat1 == self.treat2:
            raise NetworkError(f"study {self.study_id}: treat1 equals treat2 ({self.treat1})")
        if not (math.isfinite(self.se) and self.se > 0):
            raise NetworkError(f"study {self.study_id}: standard error must be positive and finite")
        if not math.isfinite(self.effect):
            raise NetworkError(f"study {self.study_id}: effect must be finite")


@dataclass(frozen=True)
class CombinationMatrix:
    """0/1 map from interventions (rows) to components and interactions (columns)."""

    rows: tuple[str, ...]
    columns: tuple[str, ...]
    values: np.ndarray
    n_components: int

    @property
    def interactions(self) -> tuple[str, ...]:
        return self.columns[self.n_components:]

    @property
    def components(self) -> tuple[str, ...]:
        return self.columns[: self.n_components]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]


def build_combination_matrix(
    interventions: Sequence[Intervention], inactive_components: Iterable[str] = ()
) -> CombinationMatrix:
    inactive = set(inactive_components)
    comps = sorted({c for iv in interventions for c in iv.components} - inactive)
    values = np.zeros((len(interventions), len(comps)), dtype=np.int64)
    index = {c: j for j, c in enumerate(comps)}
    for i, iv in enumerate(interventions):
        for c in iv.components:
            if c in index:
                values[i, index[c]] = 1
    values.setflags(write=False)
    return CombinationMatrix(tuple(iv.label for iv in interventions), tuple(comps), values, len(comps))


def add_interaction_columns(
    cmat: CombinationMatrix, interactions: Iterable[Sequence[str]], sep: str = INTERACTION_SEP
) -> CombinationMatrix:
    cols = list(cmat.columns)
    blocks = [cmat.values]
    for pair in interactions:
        a, b = sorted(pair)
        name = f"{a}{sep}{b}"
        if name in cols:
            raise NetworkError(f"duplicate interaction {name}")
        for comp in (a, b):
            if comp not in cmat.components:
                raise NetworkError(f"unknown component {comp!r} in interaction {name}")
        blocks.append((cmat.column(a) * cmat.column(b))[:, None])
        cols.append(name)
    values = np.hstack(blocks)
    values.setflags(write=False)
    return CombinationMatrix(cmat.rows, tuple(cols), values, cmat.n_components)


def numerical_rank(x: np.ndarray) -> int:
    """Rank with singular-value cutoff ``max(shape) * eps * s_max``."""
    if x.size == 0:
        return 0
    s = np.linalg.svd(np.asarray(x, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    tol = max(x.shape) * np.finfo(float).eps * s[0]
    return int(np.sum(s > tol))


@dataclass(frozen=True)
class DesignMatrices:
    B: np.ndarray
    X_nma: np.ndarray
    X_cnma: np.ndarray
    rank: int


@dataclass(frozen=True)
class Network:
    """Two-arm treatment network.

    ``inactive`` lists components that carry no effect of their own (placebo);
    an intervention made only of inactive components gets an all-zero row in
    the combination matrix.
    """

    comparisons: tuple[Comparison, ...]
    inactive: frozenset[str] = frozenset()
    order: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        seen: set[str] = set()
        for comp in self.comparisons:
            if comp.study_id in seen:
                raise NetworkError(
                    f"study {comp.study_id} has more than one comparison; multi-arm studies "
                    "are not supported (two-arm studies only)"
                )
            seen.add(comp.study_id)

    @classmethod
    def from_records(
        cls,
        records: Iterable[tuple[str, str, str, float, float]],
        inactive: Iterable[str] = (),
        separator: str = COMPONENT_SEP,
    ) -> "Network":
        comps = []
        order: dict[str, None] = {}
        for study, t1, t2, te, se in records:
            i1 = parse_intervention_label(t1, separator)
            i2 = parse_intervention_label(t2, separator)
            order.setdefault(i1.label)
            order.setdefault(i2.label)
            comps.append(Comparison(str(study), i1, i2, float(te), float(se)))
        return cls(tuple(comps), frozenset(inactive), tuple(order))

    # -- counts ---------------------------------------------------------

    @cached_property
    def interventions(self) -> tuple[Intervention, ...]:
        found = {}
        for c in self.comparisons:
            found.setdefault(c.treat1.label, c.treat1)
            found.setdefault(c.treat2.label, c.treat2)
        if self.order is not None:
            ordered = [found[l] for l in self.order if l in found]
            ordered += [found[l] for l in sorted(found) if l not in self.order]
            return tuple(ordered)
        return tuple(found.values())

    @cached_property
    def labels(self) -> tuple[str, ...]:
        return tuple(iv.label for iv in self.interventions)

    @property
    def n(self) -> int:
        return len(self.interventions)

    @property
    def m(self) -> int:
        return len(self.comparisons)

    @property
    def k(self) -> int:
        return len({c.study_id for c in self.comparisons})

    @property
    def n_arms(self) -> int:
        return 2 * self.k

    @property
    def studies(self) -> tuple[str, ...]:
        return tuple(c.study_id for c in self.comparisons)

    @property
    def effects(self) -> np.ndarray:
        return np.array([c.effect for c in self.comparisons], dtype=float)

    @property
    def se(self) -> np.ndarray:
        return np.array([c.se for c in self.comparisons], dtype=float)

    def intervention(self, label: str) -> Intervention:
        for iv in self.interventions:
            if iv.label == label:
                return iv
        raise NetworkError(f"intervention {label!r} not in network")

    def canonical(self, label: str, separator: str = COMPONENT_SEP) -> str:
        return parse_intervention_label(label, separator).label

    # -- matrices -------------------------------------------------------

    @cached_property
    def incidence(self) -> np.ndarray:
        index = {l: i for i, l in enumerate(self.labels)}
        B = np.zeros((self.m, self.n), dtype=np.int64)
        for j, c in enumerate(self.comparisons):
            B[j, index[c.treat1.label]] = 1
            B[j, index[c.treat2.label]] = -1
        B.setflags(write=False)
        return B

    @cached_property
    def combination(self) -> CombinationMatrix:
        return build_combination_matrix(self.interventions, self.inactive)

    def combination_with(self, interactions: Iterable[Sequence[str]] = ()) -> CombinationMatrix:
        return add_interaction_columns(self.combination, interactions)

    def design(self, interactions: Iterable[Sequence[str]] = (), reference: str | None = None) -> DesignMatrices:
        B = self.incidence
        ref = self._reference_index(reference)
        X_nma = np.delete(B, ref, axis=1)
        X_cnma = B @ self.combination_with(interactions).values
        return DesignMatrices(B, X_nma, X_cnma, numerical_rank(X_cnma))

    def _reference_index(self, reference: str | None) -> int:
        if reference is None:
            return 0
        return self.labels.index(self.canonical(reference))

    # -- graph ----------------------------------------------------------

    @cached_property
    def adjacency(self) -> dict[str, set[str]]:
        adj: dict[str, set[str]] = {l: set() for l in self.labels}
        for c in self.comparisons:
            adj[c.treat1.label].add(c.treat2.label)
            adj[c.treat2.label].add(c.treat1.label)
        return adj

    def subset(self, keep_studies: Iterable[str]) -> "Network":
        keep = set(keep_studies)
        return Network(
            tuple(c for c in self.comparisons if c.study_id in keep), self.inactive, self.order
        )

    def without_studies(self, drop: Iterable[str]) -> "Network":
        drop = set(drop)
        return Network(
            tuple(c for c in self.comparisons if c.study_id not in drop), self.inactive, self.order
        )


def connectivity(net: Network, reference: str | None = None) -> list[list[str]]:
    """Connected components of the comparison graph.

    The component holding ``reference`` comes first, the rest follow by
    decreasing size and then by their first label in network order.
    """
    pos = {l: i for i, l in enumerate(net.labels)}
    seen: set[str] = set()
    parts: list[list[str]] = []
    for start in net.labels:
        if start in seen:
            continue
        stack, comp = [start], []
        seen.add(start)
        while stack:
            node = stack.pop()
            comp.append(node)
            for nb in net.adjacency[node]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        parts.append(sorted(comp, key=pos.__getitem__))
    ref = net.canonical(reference) if reference is not None else None

    def key(comp):
        return (ref not in comp if ref else True, -len(comp), pos[comp[0]])

    return sorted(parts, key=key)


def n_subnetworks(net: Network) -> int:
    return len(connectivity(net))


def degrees_of_freedom(net: Network, model_kind: str, rank: int | None = None) -> int:
    """Residual degrees of freedom for ``nma``, ``additive`` or ``separate``.

    ``additive`` uses the rank of the component design (computed when
    ``rank`` is not given); ``separate`` is the one-NMA-per-subnetwork model.
    """
    base = net.n_arms - net.k
    if model_kind == "nma":
        df = base - (net.n - 1)
    elif model_kind in ("additive", "cnma"):
        r = net.design().rank if rank is None else rank
        df = base - r
    elif model_kind == "separate":
        df = base - (net.n - n_subnetworks(net))
    else:
        raise ValueError(f"unknown model kind {model_kind!r}")
    if df < 0:
        raise DegreesOfFreedomError(f"negative degrees of freedom ({df}) for {model_kind} model")
    return df


# -- ingestion ------------------------------------------------------------

CONTRAST_COLUMNS = ("studlab", "treat1", "treat2", "TE", "seTE")
ARM_COLUMNS = ("studlab", "treat1", "event1", "n1", "treat2", "event2", "n2")


def read_csv(
    path: str | Path, inactive: Iterable[str] = (), separator: str = COMPONENT_SEP
) -> Network:
    """Load a contrast-level or binary arm-level CSV into a :class:`Network`.

    Arm-level rows are converted to log odds ratios.
    """
    from .estimator import pairwise_from_binary

    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = tuple(h.strip() for h in (reader.fieldnames or ()))
        if set(CONTRAST_COLUMNS) <= set(header):
            kind = "contrast"
        elif set(ARM_COLUMNS) <= set(header):
            kind = "arm"
        else:
            raise NetworkError(
                f"{path}: header must contain {','.join(CONTRAST_COLUMNS)} "
                f"or {','.join(ARM_COLUMNS)}"
            )
        records = []
        for lineno, raw in enumerate(reader, start=2):
            row = {k.strip(): (v or "").strip() for k, v in raw.items() if k is not None}
            try:
                if kind == "contrast":
                    te, se = float(row["TE"]), float(row["seTE"])
                else:
                    te, se = pairwise_from_binary(
                        int(row["event1"]), int(row["n1"]), int(row["event2"]), int(row["n2"])
                    )
                records.append((row["studlab"], row["treat1"], row["treat2"], te, se))
            except (ValueError, KeyError) as exc:
                raise NetworkError(f"{path}:{lineno}: {exc}") from exc
    try:
        return Network.from_records(records, inactive, separator)
    except NetworkError as exc:
        raise NetworkError(f"{path}: {exc}") from exc


def write_csv(net: Network, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CONTRAST_COLUMNS)
        for c in net.comparisons:
            w.writerow([c.study_id, c.treat1.label, c.treat2.label, repr(c.effect), repr(c.se)])
