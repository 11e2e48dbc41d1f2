"""Discrete metric measure spaces.

A space is a finite connected graph whose vertices carry ambient coordinates
and positive masses, and whose edges carry positive lengths. Distances are
either Euclidean distances between coordinates (lattices of R^n) or shortest
path lengths in the graph (cones, glued balls).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

from .errors import EmptyBall, InsufficientRows

GEODESIC = "graph-geodesic"
EUCLIDEAN = "ambient-euclidean"


@dataclass(frozen=True)
class EdgeGraph:
    """The part of a space the energy sees: edges, lengths and edge volumes.

    ``volumes[e]`` is the mass an edge represents; the p-energy weight of an
    edge is ``volumes / lengths**p``.
    """

    num_vertices: int
    edges: np.ndarray
    lengths: np.ndarray
    volumes: np.ndarray

    def weights(self, p: float) -> np.ndarray:
        return self.volumes / self.lengths**p

    @property
    def graph(self) -> "EdgeGraph":
        return self


@dataclass(frozen=True, eq=False)
class MetricMeasureSpace:
    coords: np.ndarray
    edges: np.ndarray
    lengths: np.ndarray
    measure: np.ndarray
    metric_mode: str
    h: float
    generator: str = "custom"
    n: int = 2
    alpha: float = 0.0
    params: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for name in ("coords", "edges", "lengths", "measure"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.metric_mode not in (GEODESIC, EUCLIDEAN):
            raise ValueError(f"unknown metric mode {self.metric_mode!r}")
        if self.h <= 0:
            raise ValueError("mesh scale must be positive")
        if np.any(self.lengths <= 0) or np.any(self.measure <= 0):
            raise ValueError("edge lengths and vertex measures must be positive")

    @property
    def num_vertices(self) -> int:
        return len(self.measure)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def total_measure(self) -> float:
        return math.fsum(self.measure.tolist())

    @property
    def graph(self) -> EdgeGraph:
        g = self._cache.get("graph")
        if g is None:
            a, b = self.edges[:, 0], self.edges[:, 1]
            volumes = 0.5 * (self.measure[a] + self.measure[b])
            g = EdgeGraph(self.num_vertices, self.edges, self.lengths, volumes)
            self._cache["graph"] = g
        return g

    def adjacency(self):
        adj = self._cache.get("adjacency")
        if adj is None:
            a, b = self.edges[:, 0], self.edges[:, 1]
            n = self.num_vertices
            adj = coo_matrix(
                (np.concatenate([self.lengths, self.lengths]),
                 (np.concatenate([a, b]), np.concatenate([b, a]))),
                shape=(n, n),
            ).tocsr()
            self._cache["adjacency"] = adj
        return adj

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.num_vertices)

    def is_connected(self) -> bool:
        ncomp, _ = connected_components(self.adjacency(), directed=False)
        return ncomp == 1

    def distances_from(self, center: int) -> np.ndarray:
        """Distances from ``center`` to every vertex (cached, read-only)."""
        cache = self._cache.setdefault("dist", {})
        d = cache.get(center)
        if d is None:
            if self.metric_mode == EUCLIDEAN:
                d = np.linalg.norm(self.coords - self.coords[center], axis=1)
            else:
                d = dijkstra(self.adjacency(), directed=False, indices=center)
            d.setflags(write=False)
            if len(cache) > 64:
                cache.clear()
            cache[center] = d
        return d

    def distance(self, u: int, v: int) -> float:
        return float(self.distances_from(u)[v])

    def nearest_vertex(self, point) -> int:
        point = np.asarray(point, dtype=float)
        return int(np.argmin(np.linalg.norm(self.coords - point, axis=1)))

    def diameter(self) -> float:
        """Double-sweep diameter estimate (exact on lattices and cones)."""
        d_val = self._cache.get("diameter")
        if d_val is None:
            start = self.nearest_vertex(self.coords.mean(axis=0))
            far = int(np.argmax(self.distances_from(start)))
            d_val = float(np.max(self.distances_from(far)))
            self._cache["diameter"] = d_val
        return d_val

    def open_ball_mask(self, center: int, r: float) -> np.ndarray:
        return self.distances_from(center) < r

    def closed_ball_mask(self, center: int, r: float) -> np.ndarray:
        # mesh-consistent closure d <= r + h/2
        return self.distances_from(center) <= r + 0.5 * self.h


@dataclass(frozen=True)
class BallIndex:
    center: int
    radius: float
    members: np.ndarray
    mass: float


@dataclass(frozen=True)
class DimensionEstimate:
    center: int
    radii: tuple
    log_mass_slope: float
    global_q: float
    fit_residual: float


# ---------------------------------------------------------------------------
# generators


def _lattice(n, k_max):
    axes = [np.arange(-k_max, k_max + 1)] * n
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)


def _neighbor_edges(ints: np.ndarray) -> np.ndarray:
    """Nearest-neighbour edges of a finite subset of Z^n (each stored once)."""
    n = ints.shape[1]
    lo = ints.min(axis=0)
    span = ints.max(axis=0) - lo + 2
    strides = np.cumprod(np.concatenate([[1], span[:-1]]))
    keys = (ints - lo) @ strides
    order = np.argsort(keys)
    sorted_keys = keys[order]
    pairs = []
    for axis in range(n):
        target = keys + strides[axis]
        pos = np.searchsorted(sorted_keys, target)
        pos = np.minimum(pos, len(keys) - 1)
        hit = sorted_keys[pos] == target
        src = np.flatnonzero(hit)
        pairs.append(np.stack([src, order[pos[hit]]], axis=1))
    return np.concatenate(pairs).astype(np.int64)


def build_grid(n: int, half_width: float, h: float, alpha: float = 0.0) -> MetricMeasureSpace:
    """Lattice h*Z^n on [-half_width, half_width]^n with density |x|^alpha."""
    if n not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {n}")
    if h <= 0:
        raise ValueError("h must be positive")
    if alpha < 0:
        raise ValueError("measure exponent must be nonnegative")
    if half_width < 8 * h - 1e-12:
        raise ValueError("half_width must be at least 8h")
    k_max = int(round(half_width / h))
    ints = _lattice(n, k_max)
    coords = ints * h
    radius = np.linalg.norm(coords, axis=1)
    measure = h**n * np.maximum(radius, h / 2) ** alpha
    edges = _neighbor_edges(ints)
    lengths = np.full(len(edges), float(h))
    return MetricMeasureSpace(
        coords, edges, lengths, measure, EUCLIDEAN, h,
        generator="grid", n=n, alpha=float(alpha),
        params={"half_width": half_width},
    )


def build_cone(n: int, half_height: float, h: float) -> MetricMeasureSpace:
    """Double cone x_1^2+...+x_{n-1}^2 <= x_n^2, |x_n| <= half_height."""
    if n not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {n}")
    if h <= 0:
        raise ValueError("h must be positive")
    if half_height < 8 * h - 1e-12:
        raise ValueError("half_height must be at least 8h")
    k_max = int(round(half_height / h))
    ints = _lattice(n, k_max)
    inside = np.sum(ints[:, :-1] ** 2, axis=1) <= ints[:, -1] ** 2
    ints = ints[inside]
    edges = _neighbor_edges(ints)
    coords = ints * h
    space = MetricMeasureSpace(
        coords, edges, np.full(len(edges), float(h)),
        np.full(len(ints), float(h) ** n), GEODESIC, h,
        generator="cone", n=n, params={"half_height": half_height},
    )
    if not space.is_connected():
        raise ValueError("cone truncation produced a disconnected graph")
    return space


def build_glued_balls(n: int = 3, h: float = 1 / 16, neck_length: float = 0.25,
                      neck_measure: float | None = None) -> MetricMeasureSpace:
    """Two closed unit balls joined by a chain of vertices along the x_1 axis.

    Ball A is centred at the origin; the neck leaves A at (1, 0, ..) and
    enters ball B at (1 + neck_length, 0, ..). Chain vertices carry mass
    ``neck_measure`` (default h^n, a null set refined with the mesh).
    """
    if n != 3:
        raise ValueError("glued balls are built in dimension 3")
    if h <= 0:
        raise ValueError("h must be positive")
    if neck_length < 2 * h - 1e-12:
        raise ValueError("neck must be at least 2h long")
    radius_cells = int(round(1.0 / h))
    neck_cells = int(round(neck_length / h))
    cube = _lattice(n, radius_cells)
    ball = cube[np.sum(cube**2, axis=1) <= radius_cells**2]
    shift = np.zeros(n, dtype=np.int64)
    shift[0] = 2 * radius_cells + neck_cells
    chain = np.zeros((neck_cells - 1, n), dtype=np.int64)
    chain[:, 0] = radius_cells + np.arange(1, neck_cells)
    ints = np.concatenate([ball, chain, ball + shift])
    edges = _neighbor_edges(ints)
    nb, nc = len(ball), len(chain)
    measure = np.full(len(ints), h**n)
    measure[nb:nb + nc] = h**n if neck_measure is None else neck_measure
    space = MetricMeasureSpace(
        ints * h, edges, np.full(len(edges), float(h)), measure, GEODESIC, h,
        generator="glued", n=n,
        params={"neck_length": neck_cells * h, "ball_vertices": nb,
                "chain_vertices": nc},
    )
    return space


def glued_landmarks(space: MetricMeasureSpace) -> dict:
    """Vertex ids of the two ball centres and the two neck junctions."""
    nb = space.params["ball_vertices"]
    nc = space.params["chain_vertices"]
    h = space.h
    L = space.params["neck_length"]
    return {
        "center_a": space.nearest_vertex([0.0, 0.0, 0.0]),
        "junction_a": space.nearest_vertex([1.0, 0.0, 0.0]),
        "junction_b": space.nearest_vertex([1.0 + L, 0.0, 0.0]),
        "center_b": space.nearest_vertex([2.0 + L, 0.0, 0.0]),
        "chain": list(range(nb, nb + nc)),
        "h": h,
    }


# ---------------------------------------------------------------------------
# queries


def ball(space: MetricMeasureSpace, center: int, r: float) -> BallIndex:
    if r < 0:
        raise ValueError("radius must be nonnegative")
    members = np.flatnonzero(space.open_ball_mask(center, r))
    mass = math.fsum(space.measure[members].tolist())
    return BallIndex(center, float(r), members, mass)


def ball_mass(space: MetricMeasureSpace, center: int, r: float) -> float:
    return ball(space, center, r).mass


def dyadic_radii(r_max: float, h: float, min_cells: float = 4.0) -> list[float]:
    """r_max * 2^-k for k = 0, 1, ... while the radius stays >= min_cells*h."""
    radii = []
    r = r_max
    while r >= min_cells * h - 1e-12:
        radii.append(r)
        r /= 2
    return radii


def half_octave_radii(r_max: float, h: float, min_cells: float = 2.0) -> list[float]:
    """r_max * 2^(-k/2) for k = 0, 1, ... while the radius stays >= min_cells*h."""
    radii = []
    r = r_max
    while r >= min_cells * h - 1e-12:
        radii.append(r)
        r /= math.sqrt(2.0)
    return radii


def default_radii(space: MetricMeasureSpace) -> list[float]:
    return dyadic_radii(space.diameter() / 4, space.h)


def estimate_doubling(space: MetricMeasureSpace, center: int,
                      radii: Sequence[float] | None = None) -> float:
    """max_r mu(B(x, 2r)) / mu(B(x, r)) over the given radii."""
    radii = default_radii(space) if radii is None else list(radii)
    if not radii:
        raise InsufficientRows("no radii to sweep")
    worst = 0.0
    for r in radii:
        small = ball_mass(space, center, r)
        if small <= 0:
            raise EmptyBall(f"ball of radius {r} about {center} is empty")
        worst = max(worst, ball_mass(space, center, 2 * r) / small)
    return worst


def estimate_pointwise_dimension(space: MetricMeasureSpace, center: int,
                                 radii: Sequence[float] | None = None) -> DimensionEstimate:
    radii = default_radii(space) if radii is None else list(radii)
    if len(radii) < 4:
        raise InsufficientRows(f"need at least 4 radii, got {len(radii)}")
    masses = np.array([ball_mass(space, center, r) for r in radii])
    if np.any(masses <= 0):
        raise EmptyBall("empty ball in dimension sweep")
    x, y = np.log(radii), np.log(masses)
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    global_q = math.log2(estimate_doubling(space, center, radii))
    return DimensionEstimate(center, tuple(float(r) for r in radii), float(slope),
                             global_q, resid)


# ---------------------------------------------------------------------------
# serialization


def space_to_dict(space: MetricMeasureSpace) -> dict:
    return {
        "n": space.n,
        "h": space.h,
        "generator": space.generator,
        "alpha": space.alpha,
        "metric_mode": space.metric_mode,
        "params": space.params,
        "vertices": [
            {"id": i, "coords": c, "measure": m}
            for i, (c, m) in enumerate(zip(space.coords.tolist(), space.measure.tolist()))
        ],
        "edges": [[int(a), int(b), float(l)]
                  for (a, b), l in zip(space.edges.tolist(), space.lengths.tolist())],
    }


def space_from_dict(data: dict) -> MetricMeasureSpace:
    verts = sorted(data["vertices"], key=lambda v: v["id"])
    if [v["id"] for v in verts] != list(range(len(verts))):
        raise ValueError("vertex ids must be 0..N-1")
    coords = np.array([v["coords"] for v in verts], dtype=float)
    measure = np.array([v["measure"] for v in verts], dtype=float)
    edges = np.array([[e[0], e[1]] for e in data["edges"]], dtype=np.int64).reshape(-1, 2)
    lengths = np.array([e[2] for e in data["edges"]], dtype=float)
    generator = data.get("generator", "custom")
    mode = data.get("metric_mode", EUCLIDEAN if generator == "grid" else GEODESIC)
    return MetricMeasureSpace(coords, edges, lengths, measure, mode, float(data["h"]),
                              generator=generator, n=int(data.get("n", coords.shape[1])),
                              alpha=float(data.get("alpha", 0.0)),
                              params=dict(data.get("params", {})))


def save_space(space: MetricMeasureSpace, path) -> None:
    with open(path, "w") as fh:
        json.dump(space_to_dict(space), fh)


def load_space(path) -> MetricMeasureSpace:
    with open(path) as fh:
        return space_from_dict(json.load(fh))


def path_graph(num_cells: int, length: float = 1.0) -> MetricMeasureSpace:
    """Uniform path on [0, length] with unit cross-section."""
    h = length / num_cells
    coords = np.linspace(0.0, length, num_cells + 1)[:, None]
    edges = np.stack([np.arange(num_cells), np.arange(1, num_cells + 1)], axis=1)
    measure = np.full(num_cells + 1, h)
    return MetricMeasureSpace(coords, edges, np.full(num_cells, h), measure,
                              GEODESIC, h, generator="path", n=1)
