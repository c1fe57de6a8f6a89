"""System model: constellations, i.i.d. Gaussian channels, antenna clusters.

The uplink is ``y = H @ s0 + n`` with an i.i.d. ``CN(0, 1/B)`` channel matrix
``H`` of shape ``(B, U)``, transmit symbols drawn uniformly from a unit-energy
constellation, and ``CN(0, N0)`` noise.  The ``B`` receive antennas are
partitioned into contiguous clusters of ``w_c * B`` rows; a cluster only ever
touches its own slice of ``(y, H)`` and exposes the partial matched-filter
vector ``H_c^H y_c`` and partial Gram matrix ``H_c^H H_c``.  Summing the
partial products over clusters recovers the full-array statistics exactly,
which is what the partially decentralized pipeline relies on.

All containers are frozen dataclasses holding read-only arrays; everything is
safe to share across threads.  Channel draws are pure functions of
``(cfg, generator state)`` and :func:`stream` derives independent generators
from ``(seed, *path)`` so Monte Carlo trials reproduce under any scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Constellation",
    "SystemConfig",
    "ChannelRealization",
    "ClusterView",
    "make_constellation",
    "equal_weights",
    "stream",
    "complex_gaussian",
    "draw_channel",
    "split_clusters",
    "fuse_partials",
]

CONSTELLATIONS = ("qpsk", "bpsk", "16qam")


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Constellation:
    """Finite symbol alphabet with a uniform prior.

    Attributes
    ----------
    name : canonical lower-case identifier ("qpsk", "bpsk", "16qam")
    points : complex symbol values, shape (M,)
    prior : per-point probability mass, uniform 1/M
    es : mean symbol energy E|S|^2
    var_s : prior variance Var[S] (equals ``es`` for zero-mean alphabets)
    """

    name: str
    points: np.ndarray
    prior: np.ndarray
    es: float
    var_s: float

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def bits(self) -> float:
        return float(np.log2(self.size))

    @property
    def mean(self) -> complex:
        return complex(np.dot(self.prior, self.points))


def make_constellation(name: str) -> Constellation:
    """Build a unit-energy constellation with a uniform prior.

    Raises ``ValueError`` for unsupported names.
    """
    key = str(name).strip().lower()
    if key == "qpsk":
        pts = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2.0)
    elif key == "bpsk":
        pts = np.array([1.0 + 0j, -1.0 + 0j])
    elif key in ("16qam", "qam16"):
        levels = np.array([-3.0, -1.0, 1.0, 3.0])
        pts = (levels[:, None] + 1j * levels[None, :]).ravel() / np.sqrt(10.0)
        key = "16qam"
    else:
        raise ValueError(
            f"unsupported constellation {name!r}; expected one of {CONSTELLATIONS}"
        )
    prior = np.full(len(pts), 1.0 / len(pts))
    es = float(np.dot(prior, np.abs(pts) ** 2))
    mean = np.dot(prior, pts)
    var_s = float(es - abs(mean) ** 2)
    return Constellation(key, _readonly(pts), _readonly(prior), es, var_s)


def equal_weights(n_clusters: int) -> tuple[float, ...]:
    """Uniform cluster weights (1/C, ..., 1/C)."""
    if n_clusters < 1:
        raise ValueError("need at least one cluster")
    return (1.0 / n_clusters,) * n_clusters


@dataclass(frozen=True, eq=False)
class SystemConfig:
    """Dimensions and operating point of one uplink system.

    ``b`` receive antennas serve ``u`` single-antenna users at system ratio
    ``beta = u / b``; ``n0`` is the complex noise variance per receive entry
    and ``weights`` partitions the antenna rows into clusters.  Each
    ``w_c * b`` must be a positive integer.
    """

    b: int
    u: int
    n0: float
    constellation: Constellation
    weights: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if self.b < 1 or self.u < 1:
            raise ValueError("antenna and user counts must be positive")
        if self.u > self.b:
            raise ValueError(f"need u <= b, got u={self.u} > b={self.b}")
        if self.n0 < 0:
            raise ValueError("n0 must be nonnegative")
        w = np.asarray(self.weights, dtype=float)
        if w.size < 1 or np.any(w <= 0) or np.any(w > 1):
            raise ValueError("cluster weights must lie in (0, 1]")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"cluster weights must sum to 1, got {w.sum()!r}")
        rows = w * self.b
        if np.any(np.abs(rows - np.round(rows)) > 1e-9) or np.any(np.round(rows) < 1):
            raise ValueError(
                f"each w_c * b must be a positive integer; got rows {rows.tolist()}"
            )

    @property
    def beta(self) -> float:
        return self.u / self.b

    @property
    def n_clusters(self) -> int:
        return len(self.weights)

    def cluster_sizes(self) -> list[int]:
        return [int(round(w * self.b)) for w in self.weights]

    def cluster_rows(self) -> list[tuple[int, int]]:
        """Contiguous (start, stop) row blocks, one per cluster."""
        sizes = self.cluster_sizes()
        edges = np.concatenate([[0], np.cumsum(sizes)])
        if edges[-1] != self.b:
            raise ValueError("cluster sizes do not partition the antenna rows")
        return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """One draw of (H, s0, n) with the assembled receive vector y = H s0 + n."""

    h: np.ndarray   # (B, U)
    s0: np.ndarray  # (U,)
    n: np.ndarray   # (B,)
    y: np.ndarray   # (B,)


@dataclass(frozen=True, eq=False)
class ClusterView:
    """Per-cluster slice of the receive data plus local preprocessing products.

    ``y_mrc = h^H y`` and ``gram = h^H h`` are the only quantities a cluster
    forwards in the partially decentralized pipeline.
    """

    index: int
    weight: float
    h: np.ndarray      # (B_c, U)
    y: np.ndarray      # (B_c,)
    y_mrc: np.ndarray  # (U,)
    gram: np.ndarray   # (U, U)

    @property
    def rows(self) -> int:
        return len(self.y)


def stream(seed: int, *path: int) -> np.random.Generator:
    """Independent generator keyed by (seed, *path).

    The same key always yields the same stream, and distinct keys yield
    statistically independent streams, so per-trial results do not depend on
    how trials are scheduled across workers.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, path)]))


def complex_gaussian(rng: np.random.Generator, shape, var: float) -> np.ndarray:
    """Circularly symmetric complex Gaussian with total variance ``var``.

    Each real component carries var/2.
    """
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def draw_channel(cfg: SystemConfig, rng: np.random.Generator) -> ChannelRealization:
    """Draw (H, s0, n) independently and assemble y = H s0 + n.

    Draw order is fixed (H, then symbol indices, then noise) so a given
    generator state maps to exactly one realization.
    """
    con = cfg.constellation
    h = complex_gaussian(rng, (cfg.b, cfg.u), 1.0 / cfg.b)
    idx = rng.integers(0, con.size, cfg.u)
    s0 = con.points[idx]
    if cfg.n0 > 0:
        n = complex_gaussian(rng, (cfg.b,), cfg.n0)
    else:
        n = np.zeros(cfg.b, dtype=complex)
    y = h @ s0 + n
    return ChannelRealization(_readonly(h), _readonly(s0), _readonly(n), _readonly(y))


def split_clusters(real: ChannelRealization, cfg: SystemConfig) -> list[ClusterView]:
    """Slice a realization into contiguous row-block clusters.

    Each view carries its partial matched-filter vector and Gram matrix.
    """
    if real.h.shape != (cfg.b, cfg.u):
        raise ValueError(
            f"realization shape {real.h.shape} does not match cfg ({cfg.b}, {cfg.u})"
        )
    views = []
    for c, (lo, hi) in enumerate(cfg.cluster_rows()):
        hc = real.h[lo:hi]
        yc = real.y[lo:hi]
        y_mrc = hc.conj().T @ yc
        gram = hc.conj().T @ hc
        views.append(
            ClusterView(c, float(cfg.weights[c]), hc, yc,
                        _readonly(y_mrc), _readonly(gram))
        )
    return views


def fuse_partials(views: list[ClusterView]) -> tuple[np.ndarray, np.ndarray]:
    """Sum per-cluster matched-filter vectors and Gram matrices.

    Addition is associative, so any summation order is a valid adder tree;
    this one sums in cluster index order.
    """
    if not views:
        raise ValueError("need at least one cluster view")
    u = views[0].y_mrc.shape[0]
    for v in views:
        if v.y_mrc.shape != (u,) or v.gram.shape != (u, u):
            raise ValueError(f"cluster {v.index}: dimension mismatch in partials")
    y_mrc = np.sum([v.y_mrc for v in views], axis=0)
    gram = np.sum([v.gram for v in views], axis=0)
    return y_mrc, gram
