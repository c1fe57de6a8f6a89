"""Finite-dimensional equalizers and the two decentralized pipelines.

All equalizers consume the matched-filter statistics ``(y_mrc, gram)`` rather
than the raw antenna-domain data:

* ``mrc``   -- returns ``y_mrc`` as-is,
* ``zf``    -- applies ``gram^{-1}``,
* ``lmmse`` -- applies ``(gram + (n0/Es) I)^{-1}``,
* ``lama``  -- iterates a Gaussian-effective-channel estimate, a posterior
  denoiser matched to the constellation prior, and an Onsager correction
  term that keeps the per-iteration effective noise Gaussian.

Each returns the ``{z, sigma2}`` tuple of soft symbols plus per-user noise
variance estimates that downstream detection or fusion consumes.

Two pipelines are built on top: :func:`equalize_pd` sums cluster partials and
equalizes centrally (exact, since fusion of partial sums is lossless), and
:func:`equalize_fd` equalizes every cluster independently on its
``1/w_c``-rescaled local system and fuses the per-cluster soft symbols with
inverse-variance weights.

The ``*_batch`` kernels evaluate many independent realizations in one numpy
call (leading axis = trial); the single-shot public functions are thin
wrappers around them, so there is exactly one implementation of each
recursion.  All functions are pure.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .model import ClusterView, Constellation, SystemConfig, fuse_partials

__all__ = [
    "KINDS",
    "ARCHITECTURES",
    "EqualizerOutput",
    "LamaState",
    "posterior_mean_var",
    "hard_decide",
    "ser",
    "lama_pd",
    "lama_step",
    "lama_phi_trajectory",
    "linear_pd",
    "equalize_pd",
    "equalize_fd",
    "fuse_soft_symbols",
    "inverse_variance_weights",
    "lama_batch",
    "linear_batch",
]

KINDS = ("mrc", "zf", "lmmse", "lama")
ARCHITECTURES = ("pd", "fd")

# LAMA defaults: fixed iteration budget with early exit once the average
# message variance stops moving.
LAMA_MAX_ITER = 20
LAMA_TOL = 1e-8

# 1-norm condition estimate above which zero-forcing warns about ill
# conditioning before applying the LU-based inverse.
ZF_COND_WARN = 1e12


@dataclass(frozen=True, eq=False)
class EqualizerOutput:
    """Soft symbols, per-user noise-variance estimates, and hard decisions."""

    z: np.ndarray       # (U,)
    sigma2: np.ndarray  # (U,)
    hard: np.ndarray    # (U,) nearest constellation points


@dataclass(frozen=True, eq=False)
class LamaState:
    """State after ``t`` iterations: posterior means ``s``, average message
    variance ``phi``, Onsager vector ``v``, and effective noise ``tau``."""

    s: np.ndarray
    phi: float
    v: np.ndarray
    t: int
    tau: float


def posterior_weights(z, tau, con: Constellation) -> np.ndarray:
    """Posterior mass over constellation points given z = s + CN(0, tau).

    ``w_a ∝ p(a) exp(-|z - a|^2 / tau)``, evaluated with a max-shifted
    exponential so extreme ``z``/tiny ``tau`` saturate to the nearest point
    instead of producing NaN.  ``z`` may be an array; ``tau`` broadcasts
    against it; the point axis is appended last.
    """
    z_arr = np.asarray(z, dtype=complex)
    tau_arr = np.asarray(tau, dtype=float)
    if np.any(tau_arr <= 0):
        raise ValueError("tau must be strictly positive")
    pts = con.points
    # in-place pipeline: the (..., M) tensor dominates memory traffic
    w = (z_arr.real[..., None] - pts.real) ** 2
    w += (z_arr.imag[..., None] - pts.imag) ** 2
    w /= -tau_arr[..., None]
    if np.ptp(con.prior) != 0:
        w += np.log(con.prior)
    w -= w.max(axis=-1, keepdims=True)
    np.exp(w, out=w)
    w /= w.sum(axis=-1, keepdims=True)
    return w


def posterior_mean_var(z, tau, con: Constellation):
    """Posterior mean and variance of a symbol observed through z = s + CN(0, tau).

    Scalar inputs give scalar outputs; arrays broadcast elementwise.
    """
    w = posterior_weights(z, tau, con)
    pts = con.points
    mean = w @ pts
    var = np.maximum((w @ (pts.real ** 2 + pts.imag ** 2))
                     - (mean.real ** 2 + mean.imag ** 2), 0.0)
    if np.ndim(z) == 0 and np.ndim(tau) == 0:
        return complex(mean), float(var)
    return mean, var


def _decide_idx(z, con: Constellation) -> np.ndarray:
    # argmin breaks ties toward the lowest constellation index
    return np.abs(np.asarray(z)[..., None] - con.points).argmin(axis=-1)


def hard_decide(z, con: Constellation) -> np.ndarray:
    """Nearest-point decisions; ties go to the lowest point index."""
    return con.points[_decide_idx(z, con)]


def ser(hard, s0) -> float:
    """Fraction of mismatched symbol decisions."""
    hard = np.asarray(hard)
    s0 = np.asarray(s0)
    if hard.shape != s0.shape:
        raise ValueError("decision and reference vectors must have equal shape")
    return float(np.mean(hard != s0))


# ---------------------------------------------------------------------------
# LAMA
# ---------------------------------------------------------------------------

def lama_batch(y_mrc, gram, con: Constellation, n0: float, beta: float,
               max_iter: int = LAMA_MAX_ITER, tol: float = LAMA_TOL,
               onsager: bool = True, init: LamaState | None = None):
    """Run the iterative equalizer on a stack of independent systems.

    Parameters
    ----------
    y_mrc : (T, U) fused matched-filter vectors
    gram : (T, U, U) fused Gram matrices
    n0, beta : operating point; the effective noise of iteration t is
        ``tau_t = n0 + beta * phi_t``
    onsager : set False to drop the correction term (diagnostic only; the
        algorithm is known to degrade without it)
    init : optional starting state (single-system use); defaults to the
        prior mean / prior variance / zero correction

    Returns
    -------
    z : (T, U) final soft symbols
    tau : (T,) effective noise variance attached to ``z``
    phis : (T, n_recorded) trajectory of the average message variance,
        starting at the initial value; converged rows repeat their last entry
    iters : (T,) iterations actually run per system
    """
    y_mrc = np.asarray(y_mrc, dtype=complex)
    gram = np.asarray(gram, dtype=complex)
    t_n, u = y_mrc.shape
    if gram.shape != (t_n, u, u):
        raise ValueError("gram batch shape does not match y_mrc")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")

    if init is None:
        s = np.full((t_n, u), con.mean, dtype=complex)
        phi = np.full(t_n, con.var_s, dtype=float)
        v = np.zeros((t_n, u), dtype=complex)
    else:
        s = np.broadcast_to(np.asarray(init.s, dtype=complex), (t_n, u)).copy()
        phi = np.full(t_n, float(init.phi))
        v = np.broadcast_to(np.asarray(init.v, dtype=complex), (t_n, u)).copy()

    i_minus_g = np.eye(u)[None, :, :] - gram
    z = np.empty_like(y_mrc)
    tau_out = np.empty(t_n)
    iters = np.zeros(t_n, dtype=int)
    phis = [phi.copy()]
    active = np.ones(t_n, dtype=bool)

    for t in range(1, max_iter + 1):
        idx = np.nonzero(active)[0]
        tau = n0 + beta * phi[idx]
        bad = tau <= 0
        if np.any(bad):
            # only reachable for n0 = 0 once phi underflows to exactly zero;
            # those systems are already perfectly recovered
            if t == 1:
                raise ValueError("initial effective noise n0 + beta*phi must be positive")
            active[idx[bad]] = False
            idx = idx[~bad]
            tau = tau[~bad]
            if idx.size == 0:
                break
        z_t = (y_mrc[idx]
               + np.einsum("tij,tj->ti", i_minus_g[idx], s[idx])
               + v[idx])
        z[idx] = z_t
        tau_out[idx] = tau
        iters[idx] = t
        f, g = posterior_mean_var(z_t, tau[:, None], con)
        phi_new = g.mean(axis=1)
        if not (np.all(np.isfinite(phi_new)) and np.all(np.isfinite(z_t))):
            raise RuntimeError(f"lama: non-finite intermediate at iteration {t}")
        if onsager:
            v[idx] = (beta * phi_new / tau)[:, None] * (z_t - s[idx])
        s[idx] = f
        converged = np.abs(phi_new - phi[idx]) < tol
        phi[idx] = phi_new
        phis.append(phi.copy())
        active[idx[converged]] = False
        if not active.any():
            break

    return z, tau_out, np.stack(phis, axis=1), iters


def lama_pd(y_mrc, gram, cfg: SystemConfig, max_iter: int = LAMA_MAX_ITER,
            tol: float = LAMA_TOL, onsager: bool = True) -> EqualizerOutput:
    """Iterative equalization of one system from fused (y_mrc, gram).

    Runs at most ``max_iter`` iterations with early exit once the average
    message variance changes by less than ``tol``; returns the last
    Gaussian-effective observation ``z`` together with its effective noise
    variance ``n0 + beta * phi`` replicated per user.
    """
    con = cfg.constellation
    z, tau, _, _ = lama_batch(np.asarray(y_mrc, complex)[None],
                              np.asarray(gram, complex)[None],
                              con, cfg.n0, cfg.beta, max_iter, tol, onsager)
    sigma2 = np.full(len(y_mrc), tau[0])
    return EqualizerOutput(z[0], sigma2, hard_decide(z[0], con))


def lama_step(state: LamaState, y_mrc, gram, con: Constellation,
              n0: float, beta: float, onsager: bool = True):
    """Advance the recursion by one iteration; returns (z, next_state)."""
    z, tau, phis, _ = lama_batch(np.asarray(y_mrc, complex)[None],
                                 np.asarray(gram, complex)[None],
                                 con, n0, beta, max_iter=1, tol=0.0,
                                 onsager=onsager, init=state)
    phi_next = float(phis[0, -1])
    # recover s/v after the update by replaying the closed-form update
    f, _ = posterior_mean_var(z[0], tau[0], con)
    if onsager:
        v_next = (beta * phi_next / tau[0]) * (z[0] - state.s)
    else:
        v_next = np.zeros_like(z[0])
    nxt = LamaState(f, phi_next, v_next, state.t + 1, n0 + beta * phi_next)
    return z[0], nxt


def lama_initial_state(u: int, con: Constellation, n0: float, beta: float) -> LamaState:
    """Prior-matched starting state: s = E[S] 1, phi = Var[S], v = 0."""
    return LamaState(np.full(u, con.mean, dtype=complex), con.var_s,
                     np.zeros(u, dtype=complex), 1, n0 + beta * con.var_s)


def lama_phi_trajectory(y_mrc, gram, cfg: SystemConfig,
                        max_iter: int = LAMA_MAX_ITER, tol: float = 0.0,
                        onsager: bool = True) -> np.ndarray:
    """Average-message-variance trajectory, starting at the prior variance."""
    _, _, phis, _ = lama_batch(np.asarray(y_mrc, complex)[None],
                               np.asarray(gram, complex)[None],
                               cfg.constellation, cfg.n0, cfg.beta,
                               max_iter, tol, onsager)
    return phis[0]


# ---------------------------------------------------------------------------
# Linear equalizers
# ---------------------------------------------------------------------------

def _norm1(m: np.ndarray) -> np.ndarray:
    return np.abs(m).sum(axis=-2).max(axis=-1)


def linear_batch(y_mrc, gram, con: Constellation, n0: float, beta: float,
                 kind: str):
    """MRC / ZF / L-MMSE on a stack of systems; returns (z, sigma2).

    Per-user variance estimates: MRC reports the asymptotic
    ``n0 + beta * Var[S]``; ZF reports ``n0 * diag(gram^{-1})``; L-MMSE
    reports ``n0 * diag((gram + (n0/Es) I)^{-1})``, the exact per-user error
    variance of the (biased) filter output under an i.i.d. symbol prior.
    """
    y_mrc = np.asarray(y_mrc, dtype=complex)
    gram = np.asarray(gram, dtype=complex)
    t_n, u = y_mrc.shape
    kind = kind.lower()
    if kind == "mrc":
        z = y_mrc.copy()
        sigma2 = np.full((t_n, u), n0 + beta * con.var_s)
        return z, sigma2
    if kind == "zf":
        try:
            w = np.linalg.inv(gram)
        except np.linalg.LinAlgError as exc:
            raise ValueError(
                "singular Gram matrix in zero-forcing; zf needs U < B with a "
                "full-column-rank channel"
            ) from exc
        cond = _norm1(gram) * _norm1(w)
        if np.any(cond > ZF_COND_WARN):
            warnings.warn(
                f"zero-forcing Gram 1-norm condition estimate above {ZF_COND_WARN:g}",
                RuntimeWarning, stacklevel=2,
            )
    elif kind == "lmmse":
        a = gram + (n0 / con.es) * np.eye(u)[None, :, :]
        try:
            chol = np.linalg.cholesky(a)
        except np.linalg.LinAlgError as exc:
            raise ValueError("regularized Gram is not positive definite") from exc
        linv = np.linalg.inv(chol)
        w = linv.conj().swapaxes(-1, -2) @ linv
    else:
        raise ValueError(f"unknown linear equalizer kind {kind!r}")
    z = np.einsum("tij,tj->ti", w, y_mrc)
    sigma2 = n0 * np.diagonal(w, axis1=-2, axis2=-1).real.copy()
    return z, sigma2


def linear_pd(y_mrc, gram, cfg: SystemConfig, kind: str) -> EqualizerOutput:
    """One-shot linear equalization of one system from fused (y_mrc, gram)."""
    con = cfg.constellation
    z, sigma2 = linear_batch(np.asarray(y_mrc, complex)[None],
                             np.asarray(gram, complex)[None],
                             con, cfg.n0, cfg.beta, kind)
    return EqualizerOutput(z[0], sigma2[0], hard_decide(z[0], con))


# ---------------------------------------------------------------------------
# Pipelines
# ---------------------------------------------------------------------------

def _dispatch(y_mrc, gram, con, n0, beta, kind, max_iter, tol):
    if kind == "lama":
        z, tau, _, _ = lama_batch(y_mrc[None], gram[None], con, n0, beta,
                                  max_iter, tol)
        return z[0], np.full(y_mrc.shape[-1], tau[0])
    z, sigma2 = linear_batch(y_mrc[None], gram[None], con, n0, beta, kind)
    return z[0], sigma2[0]


def equalize_pd(views: list[ClusterView], cfg: SystemConfig, kind: str,
                max_iter: int = LAMA_MAX_ITER, tol: float = LAMA_TOL) -> EqualizerOutput:
    """Partially decentralized pipeline: fuse partials, equalize centrally."""
    kind = kind.lower()
    if kind not in KINDS:
        raise ValueError(f"unknown equalizer kind {kind!r}; expected one of {KINDS}")
    y_mrc, gram = fuse_partials(views)
    con = cfg.constellation
    z, sigma2 = _dispatch(y_mrc, gram, con, cfg.n0, cfg.beta, kind, max_iter, tol)
    return EqualizerOutput(z, sigma2, hard_decide(z, con))


def inverse_variance_weights(sbar) -> np.ndarray:
    """Weights ``nu_c = (1/s_c) / sum(1/s_c)``, normalized to sum to 1 exactly.

    The largest weight is rebuilt as one minus the exactly-rounded sum of the
    others, which pins ``fsum(nu) == 1.0`` bit-exactly.
    """
    sbar = np.asarray(sbar, dtype=float)
    if sbar.ndim != 1:
        raise ValueError("expected a 1-D vector of per-cluster variances")
    if np.any(sbar <= 0):
        raise ValueError("variances must be strictly positive")
    inv = 1.0 / sbar
    nu = inv / math.fsum(inv)
    top = int(np.argmax(nu))
    nu[top] = 1.0 - math.fsum(np.delete(nu, top))
    for _ in range(4):
        err = math.fsum(nu) - 1.0
        if err == 0.0:
            break
        nu[top] = np.nextafter(nu[top], -math.inf if err > 0 else math.inf)
    return nu


def fuse_soft_symbols(z_stack, sigma2_stack):
    """Inverse-variance fusion of per-cluster soft symbols.

    ``z_stack`` has shape (C, ..., U) and ``sigma2_stack`` matches.  Each
    cluster is summarized by the scalar mean of its per-user variance
    estimates; the fused output is ``sum_c nu_c z_c`` (computed as the
    inverse-variance-weighted sum over the un-normalized weights, divided by
    their total, so normalization is implicit) with the harmonic variance
    ``1 / sum(1/s_c)`` replicated per user.
    """
    z_stack = np.asarray(z_stack)
    s2 = np.asarray(sigma2_stack, dtype=float)
    if np.any(s2 <= 0):
        raise ValueError("per-cluster variances must be strictly positive")
    sbar = s2.mean(axis=-1)                    # (C, ...)
    inv = 1.0 / sbar
    z = (inv[..., None] * z_stack).sum(axis=0) / inv.sum(axis=0)[..., None]
    fused = 1.0 / inv.sum(axis=0)
    sigma2 = np.broadcast_to(fused[..., None], z.shape).astype(float).copy()
    return z, sigma2


def equalize_fd(views: list[ClusterView], cfg: SystemConfig, kind: str,
                max_iter: int = LAMA_MAX_ITER, tol: float = LAMA_TOL) -> EqualizerOutput:
    """Fully decentralized pipeline: equalize per cluster, fuse soft symbols.

    Each cluster's local system is rescaled by ``1/w_c`` (restoring
    unit-variance channel columns, which amplifies its noise to ``n0 / w_c``
    and its system ratio to ``beta / w_c``) before equalization, so every
    cluster produces an unbiased-scale soft-symbol vector plus its own
    variance estimate.  A single cluster degenerates to the PD pipeline.
    """
    kind = kind.lower()
    if kind not in KINDS:
        raise ValueError(f"unknown equalizer kind {kind!r}; expected one of {KINDS}")
    if not views:
        raise ValueError("need at least one cluster view")
    con = cfg.constellation
    if len(views) == 1:
        return equalize_pd(views, cfg, kind, max_iter, tol)

    u = views[0].y_mrc.shape[0]
    z_list, s2_list = [], []
    for view in views:
        if kind == "zf" and view.rows < u:
            raise ValueError(
                f"cluster {view.index}: zero-forcing needs U <= B_c "
                f"(got U={u}, B_c={view.rows})"
            )
        w = view.weight
        try:
            z_c, s2_c = _dispatch(view.y_mrc / w, view.gram / w, con,
                                  cfg.n0 / w, cfg.beta / w, kind, max_iter, tol)
        except Exception as exc:
            raise RuntimeError(
                f"cluster {view.index}: equalization failed: {exc}"
            ) from exc
        z_list.append(z_c)
        s2_list.append(s2_c)
    z, sigma2 = fuse_soft_symbols(np.stack(z_list), np.stack(s2_list))
    return EqualizerOutput(z, sigma2, hard_decide(z, con))
