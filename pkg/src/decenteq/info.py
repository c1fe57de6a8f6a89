"""Rate and error-rate metrics over the decoupled per-user AWGN channels.

Once the state-evolution fixed point ``sigma^2`` is known, every user sees
``y = s + sigma * Z`` with ``Z ~ CN(0, 1)``, so the per-user achievable rate
is the mutual information of that discrete-input AWGN channel and the
uncoded symbol error rate follows from Gaussian tail probabilities.  On top
of those two maps this module answers the design questions:

* ``snr_loss``        -- extra Es/N0 an equalizer/architecture needs, versus
  an interference-free AWGN link, to reach a target rate; ``inf`` when the
  target is unreachable at any SNR (e.g. above the mrc rate ceiling).
* ``min_beta_inverse`` -- smallest antenna ratio B/U whose SNR loss stays
  within a budget at a target rate.  Feasibility over the user loading is
  scanned on a grid from the top down before bisection refinement, so
  non-monotone feasible sets (which occur for the iterative equalizer at
  high rates) are handled without assuming monotonicity.

SNR follows the receive-side convention ``snr = beta * Es / n0``; losses and
budgets are expressed in dB of Es/N0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, logsumexp

from .model import Constellation
from .se import DEFAULT_ORDER, _quad_nodes, fd_fixed_point, se_fixed_point

__all__ = [
    "RatePoint",
    "mutual_information",
    "required_sigma2",
    "awgn_ser",
    "qfunc",
    "snr_loss",
    "min_beta_inverse",
]

# bisection tolerances: 0.01 dB resolves SNR requirements, 1e-4 resolves the
# two-decimal user-loading thresholds of interest
SNR_TOL_DB = 0.01
BETA_TOL = 1e-4
ESN0_BRACKET_DB = (-40.0, 80.0)


@dataclass(frozen=True, eq=False)
class RatePoint:
    """One point of a rate sweep: receive SNR, decoupled variance, rate."""

    snr_db: float
    sigma2: float
    rate: float
    kind: str
    architecture: str  # "pd", "fd", or "awgn"


def qfunc(x):
    """Gaussian tail probability Q(x)."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / np.sqrt(2.0))


def mutual_information(con: Constellation, sigma2: float,
                       order: int = DEFAULT_ORDER) -> float:
    """I(S; S + sigma Z) in bits for uniform S and Z ~ CN(0, 1).

    Evaluated with the same tensor-product Gauss-Hermite rule used for the
    MSE map; the log-domain inner sum keeps small-``sigma2`` evaluations from
    overflowing.
    """
    s2 = float(sigma2)
    if s2 <= 0:
        raise ValueError("sigma2 must be strictly positive")
    z0, w2 = _quad_nodes(order)
    pts = con.points
    sig = math.sqrt(s2)
    # log p(y) - log p(y | s) at y = s + sig*z, summed over candidates a
    diff = pts[None, :, None] - pts[None, None, :]          # s - a
    cross = 2.0 * (diff.conj() * (sig * z0)[:, None, None]).real
    expo = -(np.abs(diff) ** 2 + cross) / s2                # (Q, M, M)
    lse = logsumexp(expo, axis=-1, b=con.prior[None, None, :])
    avg = np.einsum("q,qm,m->", w2, lse, con.prior)
    return float(-avg / math.log(2.0))


def required_sigma2(con: Constellation, rate: float,
                    order: int = DEFAULT_ORDER) -> float:
    """Noise variance at which the decoupled channel achieves ``rate`` bits."""
    if not 0 < rate < con.bits:
        raise ValueError(f"rate must lie in (0, {con.bits})")
    lo, hi = 1e-10, 1e8
    for _ in range(200):
        if hi / lo < 1 + 1e-12:
            break
        mid = math.sqrt(lo * hi)
        if mutual_information(con, mid, order) >= rate:
            lo = mid
        else:
            hi = mid
    return math.sqrt(lo * hi)


def awgn_ser(con: Constellation, sigma2):
    """Uncoded symbol error rate of y = s + sigma Z with nearest-point decisions.

    Closed forms for the rectangular built-ins (bpsk, qpsk, square 16qam);
    any other alphabet falls back to dense numerical integration of the
    per-symbol correct-decision probability.
    """
    s2 = np.asarray(sigma2, dtype=float)
    if np.any(s2 <= 0):
        raise ValueError("sigma2 must be strictly positive")
    if con.name == "bpsk":
        out = qfunc(np.sqrt(2.0 * con.es / s2))
    elif con.name == "qpsk":
        q = qfunc(np.sqrt(con.es / s2))
        out = 1.0 - (1.0 - q) ** 2
    elif con.name == "16qam":
        # per-dimension 4-PAM with Gray-independent nearest thresholds
        q = qfunc(np.sqrt(0.2 * con.es / s2))
        p_dim = 1.5 * q
        out = 1.0 - (1.0 - p_dim) ** 2
    else:
        out = np.vectorize(lambda v: _ser_numeric(con, v))(s2)
    return float(out) if np.ndim(sigma2) == 0 else out


def _ser_numeric(con: Constellation, sigma2: float, n: int = 601) -> float:
    """Midpoint-rule integration of nearest-point decision regions."""
    sig = math.sqrt(sigma2)
    half = 6.0 * sig / math.sqrt(2.0)
    axis = np.linspace(-half, half, n)
    du = axis[1] - axis[0]
    u = axis[:, None] + 1j * axis[None, :]
    dens = np.exp(-np.abs(u) ** 2 / sigma2) / (np.pi * sigma2) * du * du
    p_correct = 0.0
    for k, s in enumerate(con.points):
        y = s + u
        nearest = np.abs(y.ravel()[:, None] - con.points).argmin(axis=1)
        p_correct += con.prior[k] * dens.ravel()[nearest == k].sum()
    return float(min(max(1.0 - p_correct, 0.0), 1.0))


def _sigma2_at(kind: str, architecture: str, beta: float, n0: float,
               con: Constellation, weights, order: int) -> float | None:
    """Decoupled operating variance; None when the recursion diverges."""
    try:
        if architecture == "pd":
            st = se_fixed_point(kind, beta, n0, con, order=order)
            return st.fixed_point if st.converged else None
        if architecture == "fd":
            return fd_fixed_point(kind, beta, n0, weights, con, order=order).sigma2_fd
    except RuntimeError:
        return None
    raise ValueError(f"unknown architecture {architecture!r}; expected pd or fd")


def _bisect_esn0_db(rate_at, target: float,
                    bracket=ESN0_BRACKET_DB, tol_db: float = SNR_TOL_DB):
    """Smallest Es/N0 (dB) with rate_at(esn0) >= target, or None."""
    lo, hi = bracket
    if rate_at(hi) < target:
        return None
    while hi - lo > tol_db:
        mid = 0.5 * (lo + hi)
        if rate_at(mid) >= target:
            hi = mid
        else:
            lo = mid
    return hi


def snr_loss(kind: str, architecture: str, beta: float, target_rate: float,
             con: Constellation, weights=None,
             order: int = DEFAULT_ORDER) -> float:
    """Extra Es/N0 (dB) needed to match the interference-free AWGN link.

    Both required operating points come from the same bisection at 0.01 dB
    resolution; the equalizer side maps Es/N0 to its state-evolution fixed
    point and then to the decoupled-channel rate.  Returns ``math.inf`` when
    the equalizer cannot reach the target at any SNR.
    """
    architecture = architecture.lower()
    if architecture == "fd" and weights is None:
        raise ValueError("fd loss needs cluster weights")
    if not 0 < target_rate < con.bits:
        raise ValueError(f"target_rate must lie in (0, {con.bits})")

    def rate_awgn(esn0_db):
        return mutual_information(con, con.es / 10 ** (esn0_db / 10), order)

    def rate_eq(esn0_db):
        n0 = con.es / 10 ** (esn0_db / 10)
        s2 = _sigma2_at(kind, architecture, beta, n0, con, weights, order)
        return 0.0 if s2 is None else mutual_information(con, s2, order)

    base = _bisect_esn0_db(rate_awgn, target_rate)
    if base is None:
        raise RuntimeError("AWGN baseline cannot reach the target rate in bracket")
    need = _bisect_esn0_db(rate_eq, target_rate)
    if need is None:
        return math.inf
    return need - base


def min_beta_inverse(kind: str, architecture: str, target_rate: float,
                     max_loss_db: float, con: Constellation,
                     n_clusters: int = 3, grid_step: float = 0.01,
                     beta_tol: float = BETA_TOL,
                     order: int = DEFAULT_ORDER) -> float:
    """Smallest B/U ratio keeping the SNR loss within budget at a target rate.

    Works on the equivalent monotone test: at the Es/N0 sitting exactly
    ``max_loss_db`` above the AWGN requirement, the user loading ``beta`` is
    feasible iff the equalizer's fixed-point variance does not exceed the
    variance the target rate demands.  The loading grid is scanned from 1.0
    downward (no monotonicity assumed), then the boundary above the largest
    feasible point is refined by bisection.  Returns ``math.inf`` when no
    loading in (0, 1] is feasible.
    """
    architecture = architecture.lower()
    weights = (1.0 / n_clusters,) * n_clusters if architecture == "fd" else None
    sigma2_target = required_sigma2(con, target_rate, order)

    def rate_awgn(esn0_db):
        return mutual_information(con, con.es / 10 ** (esn0_db / 10), order)

    base = _bisect_esn0_db(rate_awgn, target_rate)
    if base is None:
        raise RuntimeError("AWGN baseline cannot reach the target rate in bracket")
    n0_test = con.es / 10 ** ((base + max_loss_db) / 10)

    def feasible(beta):
        s2 = _sigma2_at(kind, architecture, beta, n0_test, con, weights, order)
        return s2 is not None and s2 <= sigma2_target

    grid = np.arange(1.0, grid_step / 2, -grid_step)
    best = None
    upper = None
    for b in grid:
        if feasible(b):
            best = float(b)
            break
        upper = float(b)
    if best is None:
        return math.inf
    if upper is None:
        return 1.0 / best
    lo, hi = best, upper
    while hi - lo > beta_tol:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return 1.0 / lo
