"""Scalar tracking of the decoupled per-user noise variance.

In the large-system limit (system ratio ``beta = U/B`` fixed, ``U`` growing)
every equalizer considered here turns the MIMO channel into a bank of
independent AWGN channels ``s + sigma * Z``.  The variance obeys the scalar
recursion

    ``sigma_t^2 = n0 + beta * psi(sigma_{t-1}^2)``

whose mean-squared-error map ``psi`` depends on the equalizer:

* ``mrc``   -> ``Var[S]``                        (constant)
* ``zf``    -> ``sigma^2``
* ``lmmse`` -> ``sigma^2 * Var[S] / (Var[S] + sigma^2)``
* ``lama``  -> ``E_{S,Z} |F(S + sigma Z, sigma^2) - S|^2`` with ``F`` the
  posterior-mean denoiser, evaluated by tensor-product Gauss-Hermite
  quadrature over ``Z`` and exact enumeration over the constellation.

Iterating from above (start ``n0 + beta * Var[S]``) is monotone for
non-decreasing ``psi`` and therefore lands on the *largest* fixed point,
which is the operating point reported throughout.  The same fixed points can
be characterized as ``sup { sigma^2 : n0 + beta * psi(sigma^2) >= w *
sigma^2 }``; :func:`sup_characterization` computes that form by a
top-down scan plus bisection and serves as an independent cross-check.

For the cluster-parallel pipeline, a cluster holding a ``w_c`` fraction of
the antennas behaves like a full system with noise ``n0 / w_c`` and ratio
``beta / w_c``; fusing the per-cluster variances with inverse-variance
weights gives the overall operating point (both closed forms of the fused
variance are exposed for cross-checking).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_hermite

from .equalize import inverse_variance_weights, posterior_weights
from .model import Constellation

__all__ = [
    "MseFunction",
    "SEState",
    "FdAnalysis",
    "OrderingReport",
    "psi",
    "se_fixed_point",
    "fixed_point_grid",
    "sup_characterization",
    "fd_cluster_fixed_point",
    "fuse_variances",
    "fd_fixed_point",
    "verify_ordering",
]

SE_KINDS = ("mrc", "zf", "lmmse", "lama")

DEFAULT_ORDER = 40      # Gauss-Hermite points per real dimension
DEFAULT_TOL = 1e-12     # relative fixed-point residual
DEFAULT_MAX_ITER = 10_000


@lru_cache(maxsize=32)
def _quad_nodes(order: int):
    """Complex quadrature nodes/weights for E[g(Z)], Z ~ CN(0, 1)."""
    x, w = roots_hermite(order)
    z = (x[:, None] + 1j * x[None, :]).ravel()
    w2 = (w[:, None] * w[None, :]).ravel() / np.pi
    z.setflags(write=False)
    w2.setflags(write=False)
    return z, w2


MAX_LAMA_ORDER = 520


def _min_dist2(con: Constellation) -> float:
    pts = con.points
    d2 = np.abs(pts[:, None] - pts[None, :]) ** 2
    return float(d2[d2 > 0].min())


def _lama_orders(sigma2: np.ndarray, base: int, dmin2: float) -> np.ndarray:
    """Quadrature order per sigma2 element; 0 marks exact-underflow points.

    Gauss-Hermite needs roughly (boundary distance / noise std)^2 nodes to
    resolve the denoiser transition.  Once the boundary-crossing mass drops
    below ~1e-13 only the magnitude matters, and once it underflows double
    precision entirely the quadrature would return exactly zero, so those
    evaluations are skipped.
    """
    expo = dmin2 / (4.0 * sigma2)
    need = 24.0 * dmin2 / (2.0 * sigma2)
    order = np.maximum(float(base), 40.0 * np.ceil(need / 40.0))
    order = np.minimum(order, MAX_LAMA_ORDER)
    order = np.where(expo >= 20.0, np.maximum(float(base), 240.0), order)
    order = np.where(expo >= 34.0, np.maximum(float(base), 160.0), order)
    order = np.where(expo > 760.0, 0.0, order)
    return order.astype(int)


def _psi_lama(sigma2: np.ndarray, con: Constellation, order: int) -> np.ndarray:
    pts = con.points
    out = np.empty(sigma2.shape)
    flat, oflat = sigma2.ravel(), out.ravel()
    orders = _lama_orders(flat, order, _min_dist2(con))
    oflat[orders == 0] = 0.0
    for q_order in np.unique(orders[orders > 0]):
        z0, w2 = _quad_nodes(int(q_order))
        sel = np.nonzero(orders == q_order)[0]
        # chunk so the (k, Q, M, M) posterior temporaries stay small
        chunk = max(1, int(2e6 // (z0.size * pts.size * pts.size)))
        for i in range(0, sel.size, chunk):
            idx = sel[i:i + chunk]
            s2 = flat[idx]
            z = pts[None, None, :] + np.sqrt(s2)[:, None, None] * z0[None, :, None]
            f = posterior_weights(z, s2[:, None, None], con) @ pts
            err = (f.real - pts.real[None, None, :]) ** 2 \
                + (f.imag - pts.imag[None, None, :]) ** 2
            oflat[idx] = np.einsum("q,kqm,m->k", w2, err, con.prior)
    return out


def psi(kind: str, sigma2, con: Constellation | None = None,
        order: int = DEFAULT_ORDER):
    """Per-user MSE of the equalizer's decoupled denoiser at noise ``sigma2``.

    Accepts scalars or arrays; requires ``sigma2 > 0``.  ``con`` is needed
    for the mrc and lama kinds.  ``order`` sets the baseline quadrature rule
    for the lama kind; evaluations at small ``sigma2`` raise the order
    internally (up to ``MAX_LAMA_ORDER``) so the denoiser's transition region
    stays resolved when it sits deep in the Gaussian tail.
    """
    kind = kind.lower()
    arr = np.asarray(sigma2, dtype=float)
    if np.any(arr <= 0):
        raise ValueError("sigma2 must be strictly positive")
    if kind == "mrc":
        out = np.full_like(arr, _var_of(con))
    elif kind == "zf":
        out = arr.copy()
    elif kind == "lmmse":
        v = _var_of(con)
        out = arr * v / (v + arr)
    elif kind == "lama":
        if con is None:
            raise ValueError("lama psi needs a constellation")
        out = _psi_lama(arr, con, order)
    else:
        raise ValueError(f"unknown equalizer kind {kind!r}; expected one of {SE_KINDS}")
    return float(out) if np.ndim(sigma2) == 0 else out


def _var_of(con: Constellation | None) -> float:
    if con is None:
        raise ValueError("this psi kind needs a constellation for Var[S]")
    return con.var_s


@dataclass(frozen=True, eq=False)
class MseFunction:
    """Callable wrapper pinning (kind, constellation, quadrature order)."""

    kind: str
    con: Constellation | None = None
    order: int = DEFAULT_ORDER

    def __call__(self, sigma2):
        return psi(self.kind, sigma2, self.con, self.order)


@dataclass(frozen=True, eq=False)
class SEState:
    """Variance trajectory and (largest) fixed point of the scalar recursion."""

    trajectory: np.ndarray
    fixed_point: float
    iterations: int
    converged: bool


def se_fixed_point(kind: str, beta: float, n0: float, con: Constellation,
                   tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                   order: int = DEFAULT_ORDER) -> SEState:
    """Iterate ``sigma^2 <- n0 + beta * psi(sigma^2)`` from above.

    Starts at ``n0 + beta * Var[S]``, which upper-bounds every fixed point,
    so the monotone-decreasing iteration selects the largest one.  Stops when
    the relative residual drops below ``tol``; non-convergence is flagged and
    the partial trajectory returned.
    """
    if beta <= 0 or n0 <= 0:
        raise ValueError("beta and n0 must be strictly positive")
    f = MseFunction(kind, con, order)
    sigma = n0 + beta * con.var_s
    traj = [sigma]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        nxt = n0 + beta * f(sigma)
        traj.append(nxt)
        if abs(sigma - nxt) <= tol * nxt:
            sigma = nxt
            converged = True
            break
        sigma = nxt
    return SEState(np.array(traj), float(sigma), it, converged)


def fixed_point_grid(kind: str, beta, n0, con: Constellation,
                     tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                     order: int = DEFAULT_ORDER):
    """Vectorized fixed points over broadcast (beta, n0) grids.

    Runs the same from-above iteration as :func:`se_fixed_point` elementwise
    and returns ``(sigma2, converged)`` arrays.
    """
    b0, n0b = np.broadcast_arrays(np.asarray(beta, float), np.asarray(n0, float))
    if np.any(b0 <= 0) or np.any(n0b <= 0):
        raise ValueError("beta and n0 must be strictly positive")
    shape = b0.shape
    b = np.atleast_1d(b0).ravel()
    n = np.atleast_1d(n0b).ravel()
    f = MseFunction(kind, con, order)
    sigma = (n + b * con.var_s).astype(float).copy()
    converged = np.zeros(sigma.shape, dtype=bool)
    active = np.ones(sigma.shape, dtype=bool)
    for _ in range(max_iter):
        idx = np.nonzero(active)[0]
        nxt = n[idx] + b[idx] * f(sigma[idx])
        done = np.abs(sigma[idx] - nxt) <= tol * nxt
        sigma[idx] = nxt
        converged[idx] = done
        active[idx] = ~done
        if not active.any():
            break
    return sigma.reshape(shape), converged.reshape(shape)


def sup_characterization(kind: str, beta: float, n0: float, w: float = 1.0,
                         con: Constellation | None = None,
                         order: int = DEFAULT_ORDER, scan: int = 128) -> float:
    """Largest ``sigma^2`` with ``n0 + beta * psi(sigma^2) >= w * sigma^2``.

    ``g(sigma^2) = n0 + beta*psi - w*sigma^2`` is positive at ``n0/w`` and
    negative above ``(n0 + beta*Var[S])/w``, so the sup lives in between; a
    top-down scan finds the highest sign change and bisection refines it.
    Independent of the fixed-point iteration, hence usable as its oracle
    (``w = 1`` reproduces the centralized operating point, ``w = w_c`` the
    per-cluster one).
    """
    if not 0 < w <= 1:
        raise ValueError("w must lie in (0, 1]")
    if beta <= 0 or n0 <= 0:
        raise ValueError("beta and n0 must be strictly positive")
    f = MseFunction(kind, con, order)
    var = _var_of(con)

    def g(s2):
        return n0 + beta * f(s2) - w * s2

    lo = n0 / w
    hi = (n0 + beta * var) / w
    if not np.isfinite(hi):
        raise RuntimeError("no finite bracket for the sup characterization")
    grid = np.linspace(lo, hi, scan)
    vals = g(grid)
    if vals[-1] >= 0:
        # boundary root (constant psi): the sup is the bracket top itself
        return float(hi)
    pos = np.nonzero(vals >= 0)[0]
    if pos.size == 0:
        raise RuntimeError("sup characterization found no nonnegative point in bracket")
    k = int(pos[-1])
    a, b = float(grid[k]), float(grid[k + 1])
    for _ in range(200):
        if (b - a) <= 1e-13 * b:
            break
        m = 0.5 * (a + b)
        if g(m) >= 0:
            a = m
        else:
            b = m
    return 0.5 * (a + b)


def fd_cluster_fixed_point(kind: str, beta: float, n0: float, w_c: float,
                           con: Constellation, tol: float = DEFAULT_TOL,
                           max_iter: int = DEFAULT_MAX_ITER,
                           order: int = DEFAULT_ORDER) -> float:
    """Largest fixed point of the per-cluster recursion.

    A cluster holding a ``w_c`` fraction of the antennas is, after
    ``1/sqrt(w_c)`` rescaling, a full system with noise ``n0 / w_c`` and
    ratio ``beta / w_c``; the iteration starts at ``(n0 + beta*Var[S])/w_c``.
    """
    if not 0 < w_c <= 1:
        raise ValueError("w_c must lie in (0, 1]")
    st = se_fixed_point(kind, beta / w_c, n0 / w_c, con, tol, max_iter, order)
    if not st.converged:
        raise RuntimeError(
            f"cluster fixed point did not converge in {max_iter} iterations "
            f"(kind={kind}, beta={beta}, n0={n0}, w_c={w_c})"
        )
    return st.fixed_point


@dataclass(frozen=True, eq=False)
class FdAnalysis:
    """Per-cluster variances, fusion weights, and the fused variance.

    ``sigma2_fd_mse`` holds the alternative closed form
    ``n0 + beta * sum_c nu_c psi(sigma_c^2)`` when the MSE context was
    supplied; both forms agree at exact cluster fixed points.
    """

    per_cluster: np.ndarray
    weights: np.ndarray
    sigma2_fd: float
    sigma2_fd_mse: float | None = None


def fuse_variances(per_cluster, kind: str | None = None,
                   con: Constellation | None = None,
                   beta: float | None = None, n0: float | None = None,
                   order: int = DEFAULT_ORDER) -> FdAnalysis:
    """Inverse-variance fusion of per-cluster decoupled variances.

    ``nu_c = (1/s_c) / sum(1/s_c)`` minimizes the fused variance
    ``sum nu_c^2 s_c`` subject to ``sum nu_c = 1`` and yields the harmonic
    combination ``(sum 1/s_c)^{-1}``.  Supplying ``kind``/``beta``/``n0``
    additionally evaluates the MSE-form identity for cross-checking.
    """
    arr = np.asarray(per_cluster, dtype=float)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError("per_cluster must be a non-empty 1-D sequence")
    if np.any(arr <= 0):
        raise ValueError("per-cluster variances must be strictly positive")
    nu = inverse_variance_weights(arr)
    fused = 1.0 / np.sum(1.0 / arr)
    via_mse = None
    if kind is not None:
        if beta is None or n0 is None:
            raise ValueError("the MSE-form check needs beta and n0")
        via_mse = float(n0 + beta * np.sum(nu * psi(kind, arr, con, order)))
    return FdAnalysis(arr, nu, float(fused), via_mse)


def fd_fixed_point(kind: str, beta: float, n0: float, weights,
                   con: Constellation, tol: float = DEFAULT_TOL,
                   max_iter: int = DEFAULT_MAX_ITER,
                   order: int = DEFAULT_ORDER) -> FdAnalysis:
    """Cluster fixed points for every weight, fused by inverse variance."""
    weights = tuple(float(w) for w in weights)
    if abs(sum(weights) - 1.0) > 1e-9:
        raise ValueError("cluster weights must sum to 1")
    per = [fd_cluster_fixed_point(kind, beta, n0, w, con, tol, max_iter, order)
           for w in weights]
    return fuse_variances(per, kind, con, beta, n0, order)


@dataclass(frozen=True, eq=False)
class OrderingReport:
    """Fused-versus-centralized variance comparison at one operating point."""

    kind: str
    sigma2_pd: float
    sigma2_fd: float
    per_cluster: np.ndarray

    @property
    def gap(self) -> float:
        return self.sigma2_fd - self.sigma2_pd


def verify_ordering(kind: str, beta: float, n0: float, weights,
                    con: Constellation, tol: float = 1e-9,
                    order: int = DEFAULT_ORDER) -> OrderingReport:
    """Check that cluster-then-fuse never beats fuse-then-equalize.

    Asserts ``sigma2_fd >= sigma2_pd`` up to ``tol`` (relative), with equality
    for the constant-MSE mrc kind; raises with both values on violation since
    a violation indicates a bug, not an unlucky draw.
    """
    pd_state = se_fixed_point(kind, beta, n0, con, order=order)
    if not pd_state.converged:
        raise RuntimeError("centralized fixed point did not converge")
    fd = fd_fixed_point(kind, beta, n0, weights, con, order=order)
    report = OrderingReport(kind, pd_state.fixed_point, fd.sigma2_fd, fd.per_cluster)
    scale = tol * max(report.sigma2_pd, n0)
    if report.gap < -scale:
        raise AssertionError(
            f"ordering violated for {kind}: sigma2_fd={report.sigma2_fd!r} < "
            f"sigma2_pd={report.sigma2_pd!r} at beta={beta}, n0={n0}"
        )
    if kind.lower() == "mrc" and abs(report.gap) > scale:
        raise AssertionError(
            f"mrc should fuse losslessly: sigma2_fd={report.sigma2_fd!r}, "
            f"sigma2_pd={report.sigma2_pd!r}"
        )
    return report
