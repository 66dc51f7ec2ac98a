"""Construct disconnected networks from a connected one by removing bridging studies."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .network import Network, NetworkError, connectivity, n_subnetworks

MAX_FREE = 20


class DisconnectError(ValueError):
    pass


@dataclass(frozen=True)
class DisconnectedDesign:
    main_set: tuple[str, ...]
    auxiliary_partition: tuple[tuple[str, ...], ...]
    removed_studies: tuple[str, ...]
    k: int
    m: int
    n_c: int
    main_k: int
    main_m: int
    id: int = 0

    @property
    def resulting_counts(self) -> dict[str, int]:
        return {"k": self.k, "m": self.m, "n_c": self.n_c}

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "main_set": list(self.main_set),
            "auxiliary_partition": [list(a) for a in self.auxiliary_partition],
            "removed_studies": list(self.removed_studies),
            "k": self.k,
            "m": self.m,
            "n_c": self.n_c,
            "main_k": self.main_k,
            "main_m": self.main_m,
        }


def minimal_set(net: Network, reference: str) -> set[str]:
    """Reference plus every intervention compared only with the reference."""
    ref = net.canonical(reference)
    if ref not in net.labels:
        raise NetworkError(f"reference {reference!r} not in network")
    return {ref} | {l for l, nbs in net.adjacency.items() if l != ref and nbs == {ref}}


def _components(nodes: Iterable[str], edges: Iterable[tuple[str, str]]) -> list[set[str]]:
    parent = {v: v for v in nodes}

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    groups: dict[str, set[str]] = {}
    for v in parent:
        groups.setdefault(find(v), set()).add(v)
    return list(groups.values())


def design_for(net: Network, main: Iterable[str], reference: str) -> DisconnectedDesign | None:
    """Design with main subnetwork ``main``, or None if the split is invalid."""
    main = set(main)
    ref = net.canonical(reference)
    if ref not in main or main >= set(net.labels):
        return None
    kept, removed = [], []
    for c in net.comparisons:
        inside = (c.treat1.label in main) + (c.treat2.label in main)
        (removed if inside == 1 else kept).append(c)
    if not removed:
        return None
    degree = {l: 0 for l in net.labels}
    for c in kept:
        degree[c.treat1.label] += 1
        degree[c.treat2.label] += 1
    if any(v == 0 for v in degree.values()):
        return None
    main_edges = [(c.treat1.label, c.treat2.label) for c in kept if c.treat1.label in main]
    if len(_components(main, main_edges)) != 1:
        return None
    rest = set(net.labels) - main
    aux_edges = [(c.treat1.label, c.treat2.label) for c in kept if c.treat1.label in rest]
    pos = {l: i for i, l in enumerate(net.labels)}
    aux = sorted(
        (tuple(sorted(g, key=pos.__getitem__)) for g in _components(rest, aux_edges)),
        key=lambda g: (-len(g), pos[g[0]]),
    )
    return DisconnectedDesign(
        main_set=tuple(sorted(main, key=pos.__getitem__)),
        auxiliary_partition=tuple(aux),
        removed_studies=tuple(sorted({c.study_id for c in removed})),
        k=len({c.study_id for c in kept}),
        m=len(kept),
        n_c=1 + len(aux),
        main_k=len({c.study_id for c in kept if c.treat1.label in main}),
        main_m=len(main_edges),
    )


def sort_designs(designs: Sequence[DisconnectedDesign], order: Sequence[str]) -> list[DisconnectedDesign]:
    pos = {l: i for i, l in enumerate(order)}
    ranked = sorted(
        designs,
        key=lambda d: (-d.m, -d.k, -d.main_m, [pos[l] for l in d.main_set]),
    )
    return [
        DisconnectedDesign(**{**d.__dict__, "id": i}) for i, d in enumerate(ranked, start=1)
    ]


def enumerate_disconnected(
    net: Network, reference: str, force: bool = False
) -> list[DisconnectedDesign]:
    """All valid main/auxiliary splits whose main set contains the minimal set.

    Sorted by decreasing comparisons, studies and main-subnetwork comparisons;
    ids are assigned 1, 2, ... in that order.
    """
    if n_subnetworks(net) > 1:
        raise DisconnectError("input network is already disconnected")
    base = minimal_set(net, reference)
    free = [l for l in net.labels if l not in base]
    if len(free) > MAX_FREE and not force:
        raise DisconnectError(
            f"{len(free)} interventions outside the minimal set (> {MAX_FREE}); pass force=True"
        )
    found: dict[tuple[str, ...], DisconnectedDesign] = {}
    for mask in range(1 << len(free)):
        main = base | {free[i] for i in range(len(free)) if mask >> i & 1}
        design = design_for(net, main, reference)
        if design is not None:
            found.setdefault(design.removed_studies, design)
    return sort_designs(list(found.values()), net.labels)


def apply_disconnect(net: Network, design: DisconnectedDesign) -> Network:
    studies = set(net.studies)
    missing = [s for s in design.removed_studies if s not in studies]
    if missing:
        raise DisconnectError(f"stale design: studies {missing} are not in the network")
    if not design.removed_studies:
        raise DisconnectError("design removes no studies; network would stay connected")
    out = net.without_studies(design.removed_studies)
    counts = {"k": out.k, "m": out.m, "n_c": n_subnetworks(out)}
    if counts != design.resulting_counts or out.n != net.n:
        raise DisconnectError(f"design does not match network: expected {design.resulting_counts}, got {counts}")
    return out


def sample_disconnected(designs: Sequence[DisconnectedDesign], rng: np.random.Generator) -> DisconnectedDesign:
    if not designs:
        raise DisconnectError("no disconnected designs to sample from")
    return designs[int(rng.integers(len(designs)))]


