"""Session (or module) neighborhood graphs for the CAR prior.

A graph node is a clustering unit: either one session or one module block
(consecutive sessions sharing a ``module_index`` within a group). Weights are
symmetric and nonnegative with a zero diagonal; islands are the connected
components of the positive-weight adjacency and set the rank deficiency of the
intrinsic prior.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .data import Dataset
from .errors import ConfigError, DataValidationError


class Unit(enum.Enum):
    SESSION = "session"
    MODULE = "module"


class IsolatedUnitError(ValueError):
    """Raised when a CAR conditional is requested for a unit with no neighbors."""


@dataclass(frozen=True)
class UnitStructure:
    """Mapping from dataset sessions to graph nodes."""

    n_units: int
    session_to_unit: np.ndarray  # (S,) int64
    labels: tuple[str, ...]
    group_of_unit: np.ndarray  # (n_units,) int64, rolling-group id per node
    unit: Unit


def unit_structure(dataset: Dataset, unit: Unit) -> UnitStructure:
    """Build the session -> node mapping for the requested clustering unit."""
    groups = {g: k for k, g in enumerate(dataset.group_ids)}
    if unit is Unit.SESSION:
        labels = tuple(s.session_id for s in dataset.sessions)
        mapping = np.arange(dataset.S, dtype=np.int64)
        gof = np.array([groups[s.group_id] for s in dataset.sessions], dtype=np.int64)
        return UnitStructure(dataset.S, mapping, labels, gof, unit)

    if any(s.module_index is None for s in dataset.sessions):
        raise ConfigError("module clustering requires module_index on every session")
    keys: dict[tuple[str, int], int] = {}
    labels_list: list[str] = []
    gof_list: list[int] = []
    mapping = np.empty(dataset.S, dtype=np.int64)
    for i, s in enumerate(dataset.sessions):  # sessions already (group, order) sorted
        key = (s.group_id, s.module_index)
        if key not in keys:
            keys[key] = len(labels_list)
            labels_list.append(f"{s.group_id}:m{s.module_index}")
            gof_list.append(groups[s.group_id])
        mapping[i] = keys[key]
    return UnitStructure(
        len(labels_list), mapping, tuple(labels_list),
        np.array(gof_list, dtype=np.int64), unit,
    )


@dataclass(frozen=True)
class SessionGraph:
    """Symmetric nonnegative weight matrix over clustering units.

    Edges are stored once with ``i < j``; ``weight_map()`` exposes both
    orientations. ``row_sums`` is the exact sum of stored weights per row and
    ``islands`` the connected-component partition of the positive-weight
    adjacency.
    """

    structure: UnitStructure
    edge_i: np.ndarray  # int64, i < j
    edge_j: np.ndarray
    edge_w: np.ndarray  # float64, > 0

    @property
    def n_units(self) -> int:
        return self.structure.n_units

    @property
    def unit(self) -> Unit:
        return self.structure.unit

    @property
    def session_to_unit(self) -> np.ndarray:
        return self.structure.session_to_unit

    @property
    def labels(self) -> tuple[str, ...]:
        return self.structure.labels

    @cached_property
    def row_sums(self) -> np.ndarray:
        rs = np.zeros(self.n_units)
        np.add.at(rs, self.edge_i, self.edge_w)
        np.add.at(rs, self.edge_j, self.edge_w)
        return rs

    @cached_property
    def islands(self) -> tuple[tuple[int, ...], ...]:
        return detect_islands(self)

    @property
    def n_islands(self) -> int:
        return len(self.islands)

    @cached_property
    def island_of(self) -> np.ndarray:
        labels = np.empty(self.n_units, dtype=np.int64)
        for k, comp in enumerate(self.islands):
            for s in comp:
                labels[s] = k
        return labels

    @cached_property
    def neighbor_csr(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(indptr, indices, weights) adjacency in index order per row."""
        counts = np.zeros(self.n_units, dtype=np.int64)
        np.add.at(counts, self.edge_i, 1)
        np.add.at(counts, self.edge_j, 1)
        indptr = np.zeros(self.n_units + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        indices = np.empty(indptr[-1], dtype=np.int64)
        weights = np.empty(indptr[-1])
        cursor = indptr[:-1].copy()
        order = np.lexsort((self.edge_j, self.edge_i))
        for e in order:  # fill row i ascending in j, then mirror rows
            i, j, w = self.edge_i[e], self.edge_j[e], self.edge_w[e]
            indices[cursor[i]] = j
            weights[cursor[i]] = w
            cursor[i] += 1
        order = np.lexsort((self.edge_i, self.edge_j))
        for e in order:
            i, j, w = self.edge_i[e], self.edge_j[e], self.edge_w[e]
            indices[cursor[j]] = i
            weights[cursor[j]] = w
            cursor[j] += 1
        return indptr, indices, weights

    def weight_map(self) -> dict[tuple[int, int], float]:
        out: dict[tuple[int, int], float] = {}
        for i, j, w in zip(self.edge_i, self.edge_j, self.edge_w):
            out[(int(i), int(j))] = float(w)
            out[(int(j), int(i))] = float(w)
        return out

    def n_edges(self) -> int:
        return len(self.edge_w)


def _finalize(structure: UnitStructure, weights: dict[tuple[int, int], float]) -> SessionGraph:
    items = sorted((i, j, w) for (i, j), w in weights.items() if w > 0.0)
    ei = np.array([i for i, _, _ in items], dtype=np.int64)
    ej = np.array([j for _, j, _ in items], dtype=np.int64)
    ew = np.array([w for _, _, w in items])
    if np.any(ew < 0):
        raise DataValidationError("negative weight in session graph")
    return SessionGraph(structure, ei, ej, ew)


def build_type1_weights(dataset: Dataset, unit: Unit = Unit.SESSION) -> SessionGraph:
    """Closeness Type 1: weight 1 between units consecutive in time within the
    same rolling group, 0 otherwise."""
    st = unit_structure(dataset, unit)
    weights: dict[tuple[int, int], float] = {}
    # units are created in (group, order) sequence, so consecutive node ids
    # within one group are consecutive in time
    for a in range(st.n_units - 1):
        b = a + 1
        if st.group_of_unit[a] == st.group_of_unit[b]:
            weights[(a, b)] = 1.0
    return _finalize(st, weights)


def build_type2_weights(dataset: Dataset, unit: Unit = Unit.SESSION) -> SessionGraph:
    """Closeness Type 2: weight between two same-group units equal to the
    shared fraction of attendees, |A ∩ B| / |A ∪ B|. Cross-group weights are
    forced to zero."""
    st = unit_structure(dataset, unit)
    sidx = dataset.session_index
    attendees: list[set[str]] = [set() for _ in range(st.n_units)]
    for o in dataset.observations:
        attendees[st.session_to_unit[sidx[o.session_id]]].add(o.client_id)
    for a, members in enumerate(attendees):
        if not members:
            raise DataValidationError(
                f"unit {st.labels[a]!r} has no attendees; cannot compute overlap weights"
            )
    weights: dict[tuple[int, int], float] = {}
    for a in range(st.n_units):
        for b in range(a + 1, st.n_units):
            if st.group_of_unit[a] != st.group_of_unit[b]:
                continue
            inter = len(attendees[a] & attendees[b])
            if inter:
                union = len(attendees[a] | attendees[b])
                weights[(a, b)] = inter / union
    return _finalize(st, weights)


def build_custom_weights(
    dataset: Dataset,
    triplets,
    unit: Unit = Unit.SESSION,
) -> SessionGraph:
    """Build a graph from user-supplied (label_a, label_b, weight) triplets.

    Labels are session ids for ``Unit.SESSION`` or ``"<group>:m<k>"`` module
    labels for ``Unit.MODULE``. Weights must be positive; each unordered pair
    may appear once.
    """
    st = unit_structure(dataset, unit)
    lookup = {lab: i for i, lab in enumerate(st.labels)}
    weights: dict[tuple[int, int], float] = {}
    for a, b, w in triplets:
        if a not in lookup or b not in lookup:
            raise ConfigError(f"custom weight references unknown unit ({a!r}, {b!r})")
        i, j = lookup[a], lookup[b]
        if i == j:
            raise ConfigError(f"self-weight not allowed (unit {a!r})")
        w = float(w)
        if not (w > 0.0) or w != w:
            raise ConfigError(f"custom weight for ({a!r}, {b!r}) must be positive")
        key = (min(i, j), max(i, j))
        if key in weights:
            raise ConfigError(f"duplicate custom weight for pair ({a!r}, {b!r})")
        weights[key] = w
    return _finalize(st, weights)


def detect_islands(graph: SessionGraph) -> tuple[tuple[int, ...], ...]:
    """Connected components of the positive-weight adjacency, as sorted tuples
    ordered by smallest member."""
    parent = list(range(graph.n_units))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, j in zip(graph.edge_i, graph.edge_j):
        ri, rj = find(int(i)), find(int(j))
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    comps: dict[int, list[int]] = {}
    for s in range(graph.n_units):
        comps.setdefault(find(s), []).append(s)
    return tuple(tuple(sorted(c)) for _, c in sorted(comps.items()))


def car_conditional(
    s: int, u: np.ndarray, graph: SessionGraph, delta: float
) -> tuple[float, float]:
    """Full-conditional moments of one structured effect given the others.

    Returns (mean, variance) with mean the weight-averaged neighbor value and
    variance ``delta / w_s+``. Raises :class:`IsolatedUnitError` when the unit
    has no neighbors; callers must apply the isolated-unit rule instead.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    indptr, indices, weights = graph.neighbor_csr
    lo, hi = indptr[s], indptr[s + 1]
    wsum = graph.row_sums[s]
    if not wsum > 0.0:
        raise IsolatedUnitError(f"unit {s} has no neighbors (w_s+ = 0)")
    acc = 0.0
    for k in range(lo, hi):
        acc += weights[k] * u[indices[k]]
    return acc / wsum, delta / wsum


def write_weights_csv(graph: SessionGraph, path) -> None:
    """Debug export of the weight matrix as sparse triplets ``s,j,w``."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("s,j,w\n")
        for i, j, w in zip(graph.edge_i, graph.edge_j, graph.edge_w):
            fh.write(f"{graph.labels[int(i)]},{graph.labels[int(j)]},{w!r}\n")
