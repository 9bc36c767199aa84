"""Cluster enumeration, Hahn-echo coherence and the CCE factorization.

The coherence of the qubit is factorized over spin clusters,

    L(t) = prod_C  Ltilde_C(t),
    Ltilde_C = L_C / prod_{C' subset C} Ltilde_C',

with clusters built from the r_dipole adjacency graph (pairwise-connected
subsets up to the CCE order). Order-2 runs stream the pair product without
retaining per-pair curves, so memory stays flat for large baths.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np
from scipy.spatial import cKDTree

from ..bath import SpinBath
from ..errors import DimensionCapError, T2ScreenError
from . import kernels
from .hamiltonian import (
    CLUSTER_DIM_CAP,
    BathArrays,
    QubitSpec,
    batched_pairs,
    batched_singletons,
    conditional_hamiltonians,
)

UNDERFLOW_FLOOR = 1e-12
DEFAULT_N_STEPS = 201
_CHUNK = 8192  # clusters per kernel call; fixed so reductions are bit-stable


@dataclass(frozen=True)
class Cluster:
    """Ordered set of bath-spin indices; order = set size."""

    indices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(sorted(self.indices)))

    @property
    def order(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class CCEParams:
    r_dipole: float
    max_order: int = 2
    b_field: tuple[float, float, float] = (0.0, 0.0, 5.0)
    times_ms: np.ndarray = field(default_factory=lambda: time_grid(1.0))
    dim_cap: int = CLUSTER_DIM_CAP
    underflow_floor: float = UNDERFLOW_FLOOR

    def __post_init__(self):
        times = np.asarray(self.times_ms, dtype=float)
        object.__setattr__(self, "times_ms", times)
        _check_time_grid(times)
        if self.max_order < 1:
            raise ValueError("max_order must be >= 1")
        if self.r_dipole <= 0:
            raise ValueError("r_dipole must be positive")


@dataclass(frozen=True)
class CoherenceCurve:
    """Sampled |L(t)| with ensemble bookkeeping."""

    times_ms: np.ndarray
    L: np.ndarray
    n_seeds: int = 1
    window_status: str = "ok"  # ok | incomplete | decayed-too-early
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        times = np.asarray(self.times_ms, dtype=float)
        L = np.asarray(self.L, dtype=float)
        object.__setattr__(self, "times_ms", times)
        object.__setattr__(self, "L", L)
        if len(times) != len(L):
            raise ValueError("times and L length mismatch")
        if len(L) and abs(L[0] - 1.0) > 1e-9:
            raise ValueError(f"L(0) = {L[0]!r}, expected 1")
        if len(L) and L.max() > 1.0 + 1e-9:
            raise ValueError("coherence magnitude above 1")

    @property
    def t_max(self) -> float:
        return float(self.times_ms[-1])

    def with_status(self, status: str) -> "CoherenceCurve":
        return replace(self, window_status=status)


def time_grid(t_max_ms: float, n_steps: int = DEFAULT_N_STEPS) -> np.ndarray:
    return np.linspace(0.0, float(t_max_ms), n_steps)


def _check_time_grid(times: np.ndarray):
    if len(times) == 0 or times[0] != 0.0:
        raise T2ScreenError("time grid must start at 0")
    if np.any(np.diff(times) <= 0):
        raise T2ScreenError("time grid must be strictly increasing")


# ---------------------------------------------------------------------------
# cluster enumeration


def _adjacency(bath: SpinBath, r_dipole: float) -> list[set[int]]:
    n = len(bath)
    adj: list[set[int]] = [set() for _ in range(n)]
    if n > 1:
        tree = cKDTree(bath.positions())
        for i, j in tree.query_pairs(r_dipole):
            adj[i].add(j)
            adj[j].add(i)
    return adj


def enumerate_clusters(bath: SpinBath, r_dipole: float, max_order: int) -> list[Cluster]:
    """All connected subsets of size <= max_order under the r_dipole graph.

    Deterministic: sorted by (order, indices). Every spin appears as a
    singleton regardless of connectivity.
    """
    if max_order < 1:
        raise ValueError("max_order must be >= 1")
    n = len(bath)
    clusters: list[tuple[int, ...]] = [(i,) for i in range(n)]
    if max_order == 1 or n < 2:
        return [Cluster(c) for c in clusters]
    adj = _adjacency(bath, r_dipole)
    if max_order == 2:
        pairs = [(i, j) for i in range(n) for j in sorted(adj[i]) if j > i]
        clusters.extend(pairs)
        return [Cluster(c) for c in sorted(clusters, key=lambda c: (len(c), c))]

    found: list[tuple[int, ...]] = []

    def grow(current: set[int], extensions: set[int], root: int):
        if len(current) >= 2:
            found.append(tuple(sorted(current)))
        if len(current) == max_order:
            return
        banned: set[int] = set()
        for u in sorted(extensions):
            new_ext = (extensions | {w for w in adj[u] if w > root}) - current - {u} - banned
            grow(current | {u}, new_ext, root)
            banned.add(u)

    for root in range(n):
        grow({root}, {w for w in adj[root] if w > root}, root)
    clusters.extend(found)
    return [Cluster(c) for c in sorted(set(clusters), key=lambda c: (len(c), c))]


# ---------------------------------------------------------------------------
# per-cluster propagation


def hahn_echo_cluster(
    qubit: QubitSpec,
    cluster,
    bath: SpinBath,
    b_field,
    times_ms,
    dim_cap: int = CLUSTER_DIM_CAP,
) -> np.ndarray:
    """Raw complex echo factor L_C(t) of one cluster (no subcluster division)."""
    times = np.asarray(times_ms, dtype=float)
    _check_time_grid(times)
    indices = cluster.indices if isinstance(cluster, Cluster) else tuple(cluster)
    spins = [bath.spins[i] for i in indices]
    h0, h1 = conditional_hamiltonians(qubit, spins, b_field, dim_cap)
    out = kernels.hahn_echo_batch(h0[None], h1[None], times / 2.0)
    return out[0]


def _singleton_curves(qubit, arrays, clusters, b_field, tau) -> np.ndarray:
    """Tilde curves for all singletons, (N, T) complex in bath-index order."""
    n = len(arrays.two_I)
    out = np.ones((n, len(tau)), dtype=complex)
    groups: dict[int, list[int]] = {}
    for c in clusters:
        idx = c.indices[0]
        groups.setdefault(int(arrays.two_I[idx]), []).append(idx)
    for two_I, indices in sorted(groups.items()):
        arr = np.asarray(indices, dtype=int)
        for lo in range(0, len(arr), _CHUNK):
            chunk = arr[lo : lo + _CHUNK]
            h0, h1 = batched_singletons(qubit, arrays, chunk, b_field, two_I)
            out[chunk] = kernels.hahn_echo_batch(h0, h1, tau)
    return out


def cce_coherence(qubit: QubitSpec, bath: SpinBath, params: CCEParams) -> CoherenceCurve:
    """CCE-factorized Hahn-echo coherence for one bath realization."""
    times = params.times_ms
    tau = times / 2.0
    diagnostics = {
        "backend": kernels.backend_name(),
        "underflow_clusters": 0,
        "n_spins": len(bath),
    }
    if len(bath) == 0:
        return CoherenceCurve(times, np.ones_like(times), diagnostics=diagnostics)

    clusters = enumerate_clusters(bath, params.r_dipole, params.max_order)
    by_order: dict[int, list[Cluster]] = {}
    for c in clusters:
        by_order.setdefault(c.order, []).append(c)
    for order in by_order:
        by_order[order].sort(key=lambda c: c.indices)
    diagnostics.update({f"n_clusters_order{k}": len(v) for k, v in sorted(by_order.items())})

    b_field = np.asarray(params.b_field, dtype=float)
    floor = params.underflow_floor
    underflow = 0
    arrays = BathArrays.build(qubit, bath, b_field)

    singles = _singleton_curves(qubit, arrays, by_order.get(1, []), b_field, tau)
    total = np.prod(singles, axis=0)

    # pairs: stream the product, dividing out the singleton factors
    pair_clusters = by_order.get(2, [])
    pair_tildes: dict[tuple[int, ...], np.ndarray] = {}
    keep_pairs = params.max_order >= 3
    groups: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for c in pair_clusters:
        i, j = c.indices
        groups.setdefault((int(arrays.two_I[i]), int(arrays.two_I[j])), []).append((i, j))
    for key in sorted(groups):
        pairs = np.asarray(groups[key], dtype=int)
        for lo in range(0, len(pairs), _CHUNK):
            chunk = pairs[lo : lo + _CHUNK]
            h0, h1 = batched_pairs(qubit, arrays, chunk, b_field, key[0], key[1])
            raw = kernels.hahn_echo_batch(h0, h1, tau)
            denom = singles[chunk[:, 0]] * singles[chunk[:, 1]]
            small = np.abs(denom) < floor
            tilde = np.where(small, 1.0 + 0.0j, raw / np.where(small, 1.0, denom))
            underflow += int(np.any(small, axis=1).sum())
            total = total * np.prod(tilde, axis=0)
            if keep_pairs:
                for row, (i, j) in enumerate(chunk):
                    pair_tildes[(int(i), int(j))] = tilde[row]

    # higher orders: generic path with full subcluster division
    if params.max_order >= 3:
        tilde_map: dict[tuple[int, ...], np.ndarray] = {}
        for c in by_order.get(1, []):
            tilde_map[c.indices] = singles[c.indices[0]]
        tilde_map.update(pair_tildes)
        for order in sorted(k for k in by_order if k >= 3):
            for c in by_order[order]:
                raw = hahn_echo_cluster(qubit, c, bath, b_field, times, params.dim_cap)
                denom = np.ones_like(raw)
                for size in range(1, order):
                    for sub in combinations(c.indices, size):
                        t = tilde_map.get(sub)
                        if t is not None:
                            denom = denom * t
                small = np.abs(denom) < floor
                tilde = np.where(small, 1.0 + 0.0j, raw / np.where(small, 1.0, denom))
                if small.any():
                    underflow += 1
                tilde_map[c.indices] = tilde
                total = total * tilde

    diagnostics["underflow_clusters"] = underflow
    L = np.clip(np.abs(total), 0.0, 1.0)
    L[0] = 1.0  # exact by construction; clamp any 1e-16 roundoff
    return CoherenceCurve(times, L, n_seeds=1, diagnostics=diagnostics)


def ensemble_average(curves: list[CoherenceCurve]) -> CoherenceCurve:
    """Pointwise arithmetic mean of |L| across bath realizations."""
    if not curves:
        raise ValueError("no curves to average")
    times = curves[0].times_ms
    for c in curves[1:]:
        if len(c.times_ms) != len(times) or not np.allclose(
            c.times_ms, times, rtol=0, atol=1e-12
        ):
            raise T2ScreenError("ensemble average requires identical time grids")
    L = np.mean([c.L for c in curves], axis=0)
    underflow = sum(c.diagnostics.get("underflow_clusters", 0) for c in curves)
    return CoherenceCurve(
        times,
        L,
        n_seeds=sum(c.n_seeds for c in curves),
        diagnostics={"underflow_clusters": underflow, "backend": kernels.backend_name()},
    )


def element_decoupled_coherence(
    qubit: QubitSpec, bath: SpinBath, params: CCEParams
) -> CoherenceCurve:
    """Product of per-element CCE curves (heteronuclear decoupling ansatz)."""
    elements = sorted({s.isotope.element for s in bath.spins})
    L = np.ones_like(params.times_ms)
    for el in elements:
        sub = bath.restricted_to_element(el)
        L = L * cce_coherence(qubit, sub, params).L
    return CoherenceCurve(params.times_ms, np.clip(L, 0.0, 1.0))
