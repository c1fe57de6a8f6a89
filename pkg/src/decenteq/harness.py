"""Experiment runner and CLI.

Experiments are described by flat INI-style config files (``key = value``
under ``[meta] / [system] / [sweep] / [run]`` sections, schema version 1)
and executed by mode-specific runners:

* ``ser_mc``     -- Monte Carlo symbol-error-rate sweep over receive SNR,
  with the analytic state-evolution prediction emitted alongside each
  simulated curve and an optional second ``[baseline]`` system on the same
  axis.
* ``se_sweep``   -- decoupled-variance fixed points over receive SNR.
* ``rate_curve`` -- per-user achievable rates over receive SNR, including
  the interference-free AWGN reference and an optional comparison curve at
  a second antenna ratio.
* ``min_beta``   -- minimum B/U ratio over a loss-budget axis (fixed target
  rate) or a target-rate axis (fixed loss budget).
* ``snr_loss``   -- SNR loss over a user-loading axis at a fixed target rate.

Results land in a :class:`ResultTable` whose CSV form is byte-identical for
identical ``(spec, seed)`` regardless of worker count: trials derive their
randomness from ``(seed, point index, trial index)`` alone, work is chunked
at fixed trial granularity, and aggregation is order-independent summation.
Failures never produce NaN cells; they are recorded as sentinel strings and
counted in the metadata.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__, info, se
from .equalize import ARCHITECTURES, KINDS, _decide_idx, fuse_soft_symbols, \
    lama_batch, linear_batch
from .model import Constellation, SystemConfig, draw_channel, equal_weights, \
    make_constellation, stream

__all__ = [
    "ConfigError",
    "ExperimentSpec",
    "ResultTable",
    "parse_config",
    "run_experiment",
    "run_ser_mc",
    "run_se_sweep",
    "run_rate_curve",
    "run_min_beta",
    "run_snr_loss",
    "cli_main",
]

SCHEMA_VERSION = 1
MODES = ("ser_mc", "se_sweep", "rate_curve", "min_beta", "snr_loss")
UNACHIEVABLE = "unachievable"
FAILED = "failed"
TRIAL_CHUNK = 512  # fixed chunking keeps results independent of worker count


class ConfigError(ValueError):
    """Invalid experiment configuration."""


# ---------------------------------------------------------------------------
# Spec parsing
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SystemSpec:
    b: int
    u: int
    weights: tuple[float, ...]
    combos: tuple[tuple[str, str], ...]  # (kind, architecture)

    @property
    def beta(self) -> float:
        return self.u / self.b

    def label(self, kind: str, arch: str, tag: str = "") -> str:
        suffix = f"_{tag}" if tag else ""
        return f"{kind}_{arch}{suffix}"


@dataclass(frozen=True, eq=False)
class ExperimentSpec:
    """Parsed, validated experiment description."""

    name: str
    mode: str
    constellation: str
    axis_name: str
    axis: tuple[float, ...]
    system: SystemSpec | None
    baseline: SystemSpec | None
    trials: int
    seed: int
    max_iter: int
    target_rate: float | None
    loss_db: float | None
    beta_inverse: float | None
    compare_beta_inverse: float | None
    n_clusters: int
    out: str | None
    raw_text: str = field(repr=False, default="")

    @property
    def con(self) -> Constellation:
        return make_constellation(self.constellation)

    def spec_hash(self) -> str:
        return hashlib.sha256(self.raw_text.encode()).hexdigest()[:16]


def _parse_floats(text: str) -> tuple[float, ...]:
    vals = tuple(float(tok) for tok in text.replace(",", " ").split())
    if not vals:
        raise ConfigError("empty sweep axis")
    if list(vals) != sorted(vals):
        raise ConfigError("sweep axis must be sorted ascending")
    return vals


def _parse_combos(text: str) -> tuple[tuple[str, str], ...]:
    combos = []
    for tok in text.replace(",", " ").split():
        try:
            kind, arch = tok.lower().split(":")
        except ValueError:
            raise ConfigError(f"equalizer entry {tok!r} must look like kind:arch")
        if kind not in KINDS:
            raise ConfigError(f"unknown equalizer kind {kind!r}")
        if arch not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {arch!r}")
        combos.append((kind, arch))
    if not combos:
        raise ConfigError("no equalizers configured")
    return tuple(combos)


def _parse_system(section, combos_default=None) -> SystemSpec:
    try:
        b = section.getint("b")
        u = section.getint("u")
    except (TypeError, ValueError):
        raise ConfigError("system needs integer b and u")
    if b is None or u is None:
        raise ConfigError("system needs b and u")
    if "weights" in section:
        weights = tuple(float(t) for t in section["weights"].replace(",", " ").split())
    else:
        weights = equal_weights(section.getint("clusters", 1))
    combos = _parse_combos(section["equalizers"]) if "equalizers" in section \
        else combos_default
    if combos is None:
        raise ConfigError("system needs an equalizers entry")
    return SystemSpec(b, u, weights, combos)


def parse_config(text: str, overrides: dict | None = None) -> ExperimentSpec:
    """Parse and validate a config file body into an :class:`ExperimentSpec`.

    ``overrides`` may replace seed / trials / out after parsing (CLI flags).
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    for sec in ("meta", "sweep", "run"):
        if sec not in cp:
            raise ConfigError(f"missing [{sec}] section")
    meta, sweep, run = cp["meta"], cp["sweep"], cp["run"]

    schema = meta.getint("schema", fallback=None)
    if schema != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema {schema!r}; this build reads {SCHEMA_VERSION}")
    mode = meta.get("mode", "").strip().lower()
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
    name = meta.get("name", "experiment").strip()

    axis_keys = [k for k in ("snr_db", "loss_db", "target_rate", "beta") if k in sweep]
    if len(axis_keys) != 1:
        raise ConfigError("[sweep] must define exactly one axis "
                          "(snr_db | loss_db | target_rate | beta)")
    axis_name = axis_keys[0]
    axis = _parse_floats(sweep[axis_name])
    expected_axis = {"ser_mc": "snr_db", "se_sweep": "snr_db",
                     "rate_curve": "snr_db", "snr_loss": "beta"}
    if mode in expected_axis and axis_name != expected_axis[mode]:
        raise ConfigError(f"mode {mode} sweeps {expected_axis[mode]}, not {axis_name}")
    if mode == "min_beta" and axis_name not in ("loss_db", "target_rate"):
        raise ConfigError("mode min_beta sweeps loss_db or target_rate")

    constellation = None
    system = baseline = None
    n_clusters = 1
    if "system" in cp:
        constellation = cp["system"].get("constellation", "qpsk").strip().lower()
        n_clusters = cp["system"].getint("clusters", fallback=1)
    else:
        constellation = run.get("constellation", "qpsk").strip().lower()
    make_constellation(constellation)  # validate early

    combos = _parse_combos(run["equalizers"]) if "equalizers" in run else None

    trials = run.getint("trials", fallback=1)
    seed = run.getint("seed", fallback=0)
    max_iter = run.getint("max_iter", fallback=20)
    target_rate = run.getfloat("target_rate", fallback=None)
    loss_db = run.getfloat("loss_db", fallback=None)
    beta_inverse = run.getfloat("beta_inverse", fallback=None)
    compare_binv = run.getfloat("compare_beta_inverse", fallback=None)
    out = run.get("out", fallback=None)

    if mode == "ser_mc":
        if "system" not in cp:
            raise ConfigError("ser_mc needs a [system] section")
        system = _parse_system(cp["system"], combos)
        if "baseline" in cp:
            baseline = _parse_system(cp["baseline"], combos)
        if trials < 1:
            raise ConfigError("ser_mc needs trials >= 1")
        SystemConfig(system.b, system.u, 1.0, make_constellation(constellation),
                     system.weights)  # validates dimensions/weights
        if baseline is not None:
            SystemConfig(baseline.b, baseline.u, 1.0,
                         make_constellation(constellation), baseline.weights)
    elif mode in ("se_sweep", "rate_curve", "snr_loss", "min_beta"):
        if combos is None:
            raise ConfigError(f"{mode} needs run.equalizers")
        if mode == "rate_curve":
            if beta_inverse is None or beta_inverse < 1:
                raise ConfigError("rate_curve needs run.beta_inverse >= 1")
        else:
            beta_inverse = run.getfloat("beta_inverse", fallback=beta_inverse)
        if mode == "min_beta":
            if axis_name == "loss_db" and target_rate is None:
                raise ConfigError("min_beta over loss_db needs run.target_rate")
            if axis_name == "target_rate" and loss_db is None:
                raise ConfigError("min_beta over target_rate needs run.loss_db")
        if mode in ("snr_loss",) and target_rate is None:
            raise ConfigError("snr_loss needs run.target_rate")
        if mode in ("se_sweep", "snr_loss") and beta_inverse is None:
            raise ConfigError(f"{mode} needs run.beta_inverse")
        system = SystemSpec(0, 0, equal_weights(n_clusters), combos)

    spec = ExperimentSpec(
        name=name, mode=mode, constellation=constellation,
        axis_name=axis_name, axis=axis, system=system, baseline=baseline,
        trials=trials, seed=seed, max_iter=max_iter,
        target_rate=target_rate, loss_db=loss_db,
        beta_inverse=beta_inverse, compare_beta_inverse=compare_binv,
        n_clusters=n_clusters, out=out, raw_text=text,
    )
    if overrides:
        spec = _apply_overrides(spec, overrides)
    return spec


def _apply_overrides(spec: ExperimentSpec, overrides: dict) -> ExperimentSpec:
    from dataclasses import replace
    allowed = {k: v for k, v in overrides.items()
               if k in ("seed", "trials", "out") and v is not None}
    return replace(spec, **allowed) if allowed else spec


def load_config(path: str, overrides: dict | None = None) -> ExperimentSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    return parse_config(text, overrides)


# ---------------------------------------------------------------------------
# Result table
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, float) and math.isinf(v):
        return UNACHIEVABLE
    return format(float(v), ".12g")


@dataclass(eq=False)
class ResultTable:
    """Column-named sweep results plus reproducibility metadata."""

    columns: list[str]
    rows: list[list]
    metadata: dict

    def to_csv(self) -> str:
        lines = [f"# {k} = {v}" for k, v in self.metadata.items()]
        lines.append(",".join(self.columns))
        for row in self.rows:
            lines.append(",".join(_fmt(v) for v in row))
        return "\n".join(lines) + "\n"

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())

    def column(self, name: str) -> list:
        return [row[self.columns.index(name)] for row in self.rows]


def _base_metadata(spec: ExperimentSpec) -> dict:
    return {
        "generator": f"decenteq {__version__}",
        "schema": SCHEMA_VERSION,
        "name": spec.name,
        "mode": spec.mode,
        "constellation": spec.constellation,
        "seed": spec.seed,
        "spec_hash": spec.spec_hash(),
    }


# ---------------------------------------------------------------------------
# Monte Carlo SER
# ---------------------------------------------------------------------------

def _ser_chunk(payload: dict, point_idx: int, start: int, count: int):
    """Error counts for one chunk of trials at one sweep point.

    Deterministic in (payload, point_idx, trial indices); returns per-combo
    (symbol error count, failed trial count).
    """
    con = make_constellation(payload["constellation"])
    cfg = SystemConfig(payload["b"], payload["u"], payload["n0"], con,
                       payload["weights"])
    combos = payload["combos"]
    max_iter = payload["max_iter"]
    u, weights = cfg.u, cfg.weights

    h = np.empty((count, cfg.b, u), dtype=complex)
    s0_idx = np.empty((count, u), dtype=np.int64)
    y = np.empty((count, cfg.b), dtype=complex)
    for j in range(count):
        rng = stream(payload["seed"], point_idx, start + j)
        real = draw_channel(cfg, rng)
        h[j] = real.h
        s0_idx[j] = _decide_idx(real.s0, con)
        y[j] = real.y

    blocks = cfg.cluster_rows()
    y_mrc_c, gram_c = [], []
    for lo, hi in blocks:
        hc = h[:, lo:hi, :]
        yc = y[:, lo:hi]
        y_mrc_c.append(np.einsum("tbi,tb->ti", hc.conj(), yc))
        gram_c.append(np.einsum("tbi,tbj->tij", hc.conj(), hc))
    y_mrc = np.sum(y_mrc_c, axis=0)
    gram = np.sum(gram_c, axis=0)

    def run_combo(kind, arch):
        if arch == "pd":
            if kind == "lama":
                z, _, _, _ = lama_batch(y_mrc, gram, con, cfg.n0, cfg.beta,
                                        max_iter=max_iter)
            else:
                z, _ = linear_batch(y_mrc, gram, con, cfg.n0, cfg.beta, kind)
            return z
        z_list, s2_list = [], []
        for c, w in enumerate(weights):
            if kind == "lama":
                zc, tau, _, _ = lama_batch(y_mrc_c[c] / w, gram_c[c] / w, con,
                                           cfg.n0 / w, cfg.beta / w,
                                           max_iter=max_iter)
                s2c = np.repeat(tau[:, None], u, axis=1)
            else:
                zc, s2c = linear_batch(y_mrc_c[c] / w, gram_c[c] / w, con,
                                       cfg.n0 / w, cfg.beta / w, kind)
            z_list.append(zc)
            s2_list.append(s2c)
        if len(weights) == 1:
            return z_list[0]
        z, _ = fuse_soft_symbols(np.stack(z_list), np.stack(s2_list))
        return z

    errors = np.zeros(len(combos), dtype=np.int64)
    failed = np.zeros(len(combos), dtype=np.int64)
    for k, (kind, arch) in enumerate(combos):
        try:
            z = run_combo(kind, arch)
            errors[k] = int((_decide_idx(z, con) != s0_idx).sum())
        except Exception:
            # isolate the failure per trial so one bad draw cannot void a chunk
            for j in range(count):
                try:
                    zj = _run_single(kind, arch, y_mrc[j], gram[j],
                                     [g[j] for g in y_mrc_c],
                                     [g[j] for g in gram_c],
                                     con, cfg, max_iter)
                    errors[k] += int((_decide_idx(zj, con) != s0_idx[j]).sum())
                except Exception:
                    failed[k] += 1
    return errors, failed, count


def _run_single(kind, arch, y_mrc, gram, y_mrc_c, gram_c, con, cfg, max_iter):
    if arch == "pd":
        if kind == "lama":
            z, _, _, _ = lama_batch(y_mrc[None], gram[None], con, cfg.n0,
                                    cfg.beta, max_iter=max_iter)
        else:
            z, _ = linear_batch(y_mrc[None], gram[None], con, cfg.n0,
                                cfg.beta, kind)
        return z[0]
    z_list, s2_list = [], []
    for c, w in enumerate(cfg.weights):
        if kind == "lama":
            zc, tau, _, _ = lama_batch(y_mrc_c[c][None] / w, gram_c[c][None] / w,
                                       con, cfg.n0 / w, cfg.beta / w,
                                       max_iter=max_iter)
            s2c = np.repeat(tau[:, None], cfg.u, axis=1)
        else:
            zc, s2c = linear_batch(y_mrc_c[c][None] / w, gram_c[c][None] / w,
                                   con, cfg.n0 / w, cfg.beta / w, kind)
        z_list.append(zc[0])
        s2_list.append(s2c[0])
    if len(cfg.weights) == 1:
        return z_list[0]
    z, _ = fuse_soft_symbols(np.stack(z_list), np.stack(s2_list))
    return z


def _ser_chunk_star(args):
    return _ser_chunk(*args)


def _predicted_ser(kind: str, arch: str, beta: float, n0: float,
                   weights, con: Constellation) -> float | str:
    """Analytic dashed-line value: fixed point -> AWGN symbol error rate."""
    try:
        if arch == "pd":
            st = se.se_fixed_point(kind, beta, n0, con)
            if not st.converged:
                return FAILED
            s2 = st.fixed_point
        else:
            s2 = se.fd_fixed_point(kind, beta, n0, weights, con).sigma2_fd
    except RuntimeError:
        return FAILED
    return info.awgn_ser(con, s2)


def resolve_threads(threads: int | None = None) -> int:
    """Worker count: explicit argument, else DECENTEQ_THREADS, else cpu count."""
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("DECENTEQ_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"DECENTEQ_THREADS must be an integer, got {env!r}")
    return os.cpu_count() or 1


def run_ser_mc(spec: ExperimentSpec, threads: int | None = None) -> ResultTable:
    """Monte Carlo SER sweep with matching state-evolution predictions.

    SNR is the receive-side ``beta * Es / n0``; every system on the axis maps
    an SNR point to its own ``n0``.  Standard errors use sqrt(p(1-p)/trials).
    """
    if spec.mode != "ser_mc":
        raise ConfigError(f"run_ser_mc needs mode ser_mc, got {spec.mode}")
    con = spec.con
    n_workers = resolve_threads(threads)

    systems = [("", spec.system)]
    if spec.baseline is not None:
        tag = f"{spec.baseline.b}x{spec.baseline.u}"
        systems.append((tag, spec.baseline))

    columns = [spec.axis_name]
    for tag, sysspec in systems:
        for kind, arch in sysspec.combos:
            lbl = sysspec.label(kind, arch, tag)
            columns += [f"ser_{lbl}", f"mcse_{lbl}", f"se_ser_{lbl}"]

    failed_total: dict[str, int] = {}
    rows = []
    for p, snr_db in enumerate(spec.axis):
        row = [snr_db]
        for tag, sysspec in systems:
            beta = sysspec.beta
            n0 = beta * con.es / 10 ** (snr_db / 10)
            payload = {
                "constellation": spec.constellation, "b": sysspec.b,
                "u": sysspec.u, "weights": sysspec.weights, "n0": n0,
                "combos": sysspec.combos, "seed": spec.seed,
                "max_iter": spec.max_iter,
            }
            point_key = p if not tag else p + 1_000_000  # disjoint streams per system
            tasks = [(payload, point_key, s, min(TRIAL_CHUNK, spec.trials - s))
                     for s in range(0, spec.trials, TRIAL_CHUNK)]
            if n_workers > 1 and len(tasks) > 1:
                with ProcessPoolExecutor(max_workers=n_workers) as pool:
                    parts = list(pool.map(_ser_chunk_star, tasks))
            else:
                parts = [_ser_chunk_star(t) for t in tasks]
            errors = np.sum([pt[0] for pt in parts], axis=0)
            failed = np.sum([pt[1] for pt in parts], axis=0)
            for k, (kind, arch) in enumerate(sysspec.combos):
                lbl = sysspec.label(kind, arch, tag)
                ok_trials = spec.trials - int(failed[k])
                failed_total[lbl] = failed_total.get(lbl, 0) + int(failed[k])
                if ok_trials <= 0:
                    row += [FAILED, FAILED]
                else:
                    p_hat = errors[k] / (ok_trials * sysspec.u)
                    mcse = math.sqrt(max(p_hat * (1 - p_hat), 0.0) / ok_trials)
                    row += [p_hat, mcse]
                row.append(_predicted_ser(kind, arch, beta, n0,
                                          sysspec.weights, con))
        rows.append(row)

    meta = _base_metadata(spec)
    meta["trials"] = spec.trials
    for lbl in sorted(failed_total):
        if failed_total[lbl]:
            meta[f"failed_trials_{lbl}"] = failed_total[lbl]
    return ResultTable(columns, rows, meta)


# ---------------------------------------------------------------------------
# SE-level sweeps
# ---------------------------------------------------------------------------

def _combo_sigma2(kind, arch, beta, n0, weights, con):
    try:
        if arch == "pd":
            st = se.se_fixed_point(kind, beta, n0, con)
            return st.fixed_point if st.converged else None
        return se.fd_fixed_point(kind, beta, n0, weights, con).sigma2_fd
    except RuntimeError:
        return None


def run_se_sweep(spec: ExperimentSpec) -> ResultTable:
    """Fixed-point decoupled variances over the receive-SNR axis."""
    if spec.mode != "se_sweep":
        raise ConfigError(f"run_se_sweep needs mode se_sweep, got {spec.mode}")
    con = spec.con
    beta = 1.0 / spec.beta_inverse
    weights = equal_weights(spec.n_clusters)
    combos = spec.system.combos
    columns = [spec.axis_name] + [f"sigma2_{k}_{a}" for k, a in combos]
    rows = []
    for snr_db in spec.axis:
        n0 = beta * con.es / 10 ** (snr_db / 10)
        row = [snr_db]
        for kind, arch in combos:
            s2 = _combo_sigma2(kind, arch, beta, n0, weights, con)
            row.append(FAILED if s2 is None else s2)
        rows.append(row)
    meta = _base_metadata(spec)
    meta["beta_inverse"] = spec.beta_inverse
    return ResultTable(columns, rows, meta)


def run_rate_curve(spec: ExperimentSpec) -> ResultTable:
    """Achievable-rate curves plus the AWGN reference on a receive-SNR axis."""
    if spec.mode != "rate_curve":
        raise ConfigError(f"run_rate_curve needs mode rate_curve, got {spec.mode}")
    con = spec.con
    beta = 1.0 / spec.beta_inverse
    weights = equal_weights(spec.n_clusters)
    combos = spec.system.combos
    columns = [spec.axis_name, "rate_awgn"]
    columns += [f"rate_{k}_{a}" for k, a in combos]
    compare = spec.compare_beta_inverse
    if compare is not None:
        columns.append(f"rate_lama_pd_binv{compare:g}")
    rows = []
    for snr_db in spec.axis:
        n0 = beta * con.es / 10 ** (snr_db / 10)
        row = [snr_db, info.mutual_information(con, n0)]
        for kind, arch in combos:
            s2 = _combo_sigma2(kind, arch, beta, n0, weights, con)
            row.append(FAILED if s2 is None else info.mutual_information(con, s2))
        if compare is not None:
            beta2 = 1.0 / compare
            n02 = beta2 * con.es / 10 ** (snr_db / 10)
            s2 = _combo_sigma2("lama", "pd", beta2, n02, None, con)
            row.append(FAILED if s2 is None else info.mutual_information(con, s2))
        rows.append(row)
    meta = _base_metadata(spec)
    meta["beta_inverse"] = spec.beta_inverse
    if compare is not None:
        meta["compare_beta_inverse"] = compare
    return ResultTable(columns, rows, meta)


def run_min_beta(spec: ExperimentSpec) -> ResultTable:
    """Minimum B/U ratio over a loss-budget or target-rate axis."""
    if spec.mode != "min_beta":
        raise ConfigError(f"run_min_beta needs mode min_beta, got {spec.mode}")
    con = spec.con
    combos = spec.system.combos
    columns = [spec.axis_name] + [f"beta_inv_{k}_{a}" for k, a in combos]
    rows = []
    for x in spec.axis:
        if spec.axis_name == "loss_db":
            rate, loss = spec.target_rate, x
        else:
            rate, loss = x, spec.loss_db
        row = [x]
        for kind, arch in combos:
            try:
                binv = info.min_beta_inverse(kind, arch, rate, loss, con,
                                             n_clusters=spec.n_clusters)
            except (RuntimeError, ValueError):
                binv = math.inf
            row.append(binv)
        rows.append(row)
    meta = _base_metadata(spec)
    if spec.target_rate is not None:
        meta["target_rate"] = spec.target_rate
    if spec.loss_db is not None:
        meta["loss_db"] = spec.loss_db
    meta["clusters"] = spec.n_clusters
    return ResultTable(columns, rows, meta)


def run_snr_loss(spec: ExperimentSpec) -> ResultTable:
    """SNR loss versus user loading at a fixed target rate."""
    if spec.mode != "snr_loss":
        raise ConfigError(f"run_snr_loss needs mode snr_loss, got {spec.mode}")
    con = spec.con
    combos = spec.system.combos
    weights = equal_weights(spec.n_clusters)
    columns = [spec.axis_name] + [f"loss_db_{k}_{a}" for k, a in combos]
    rows = []
    for beta in spec.axis:
        row = [beta]
        for kind, arch in combos:
            try:
                loss = info.snr_loss(kind, arch, beta, spec.target_rate, con,
                                     weights if arch == "fd" else None)
            except (RuntimeError, ValueError):
                loss = math.inf
            row.append(loss)
        rows.append(row)
    meta = _base_metadata(spec)
    meta["target_rate"] = spec.target_rate
    meta["clusters"] = spec.n_clusters
    return ResultTable(columns, rows, meta)


_RUNNERS = {
    "ser_mc": run_ser_mc,
    "se_sweep": run_se_sweep,
    "rate_curve": run_rate_curve,
    "min_beta": run_min_beta,
    "snr_loss": run_snr_loss,
}


def run_experiment(spec: ExperimentSpec, threads: int | None = None) -> ResultTable:
    """Dispatch a parsed spec to its mode runner."""
    if spec.mode == "ser_mc":
        return run_ser_mc(spec, threads)
    return _RUNNERS[spec.mode](spec)


# ---------------------------------------------------------------------------
# SVG plot data
# ---------------------------------------------------------------------------

def write_svg(table: ResultTable, path: str, log_y: bool | None = None) -> None:
    """Minimal line plot of every numeric column against the axis column."""
    width, height, pad = 720, 480, 60
    axis = [row[0] for row in table.rows]
    series = {}
    for j, name in enumerate(table.columns[1:], start=1):
        pts = [(x, row[j]) for x, row in zip(axis, table.rows)
               if isinstance(row[j], (int, float)) and math.isfinite(row[j])]
        if pts:
            series[name] = pts
    if not series:
        raise RuntimeError("no numeric series to plot")
    ys = [y for pts in series.values() for _, y in pts]
    if log_y is None:
        positive = [y for y in ys if y > 0]
        log_y = bool(positive) and max(ys) / max(min(positive), 1e-300) > 1e3
    def ty(y):
        return math.log10(max(y, 1e-300)) if log_y else y
    ys_t = [ty(y) for y in ys if (y > 0 or not log_y)]
    x_lo, x_hi = min(axis), max(axis)
    y_lo, y_hi = min(ys_t), max(ys_t)
    x_span = (x_hi - x_lo) or 1.0
    y_span = (y_hi - y_lo) or 1.0

    def px(x):
        return pad + (x - x_lo) / x_span * (width - 2 * pad)

    def py(y):
        return height - pad - (ty(y) - y_lo) / y_span * (height - 2 * pad)

    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
               "#8c564b", "#17becf", "#7f7f7f", "#bcbd22", "#e377c2"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height-pad}" x2="{width-pad}" y2="{height-pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height-pad}" stroke="black"/>',
        f'<text x="{width/2:.1f}" y="{height-16}" text-anchor="middle" '
        f'font-size="13">{table.columns[0]}</text>',
    ]
    for i, (name, pts) in enumerate(series.items()):
        color = palette[i % len(palette)]
        drawable = [(x, y) for x, y in pts if (y > 0 or not log_y)]
        if not drawable:
            continue
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in drawable)
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                     f'points="{coords}"/>')
        parts.append(f'<text x="{width-pad+4}" y="{pad + 14*i}" font-size="11" '
                     f'fill="{color}">{name}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); the CLI contract is 1
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="decenteq",
                     description="Decentralized equalization experiment runner")
    sub = parser.add_subparsers(dest="cmd", required=True)
    run = sub.add_parser("run", help="execute an experiment config")
    run.add_argument("config", help="path to a .cfg experiment file")
    run.add_argument("--seed", type=int, default=None, help="override run seed")
    run.add_argument("--trials", type=int, default=None, help="override trial count")
    run.add_argument("--threads", type=int, default=None,
                     help="worker processes (default: DECENTEQ_THREADS or cpu count)")
    run.add_argument("--out", default=None, help="output path (default <name>.csv)")
    run.add_argument("--format", choices=("csv", "svg"), default="csv",
                     help="svg additionally writes plot data next to the csv")
    val = sub.add_parser("validate", help="schema-check a config without running")
    val.add_argument("config")
    return parser


def cli_main(argv=None) -> int:
    """Entry point: parse args, dispatch, write outputs.

    Exit codes: 0 success, 1 configuration/usage error, 2 runtime failure.
    """
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1

    try:
        if ns.cmd == "validate":
            spec = load_config(ns.config)
            print(f"ok: {spec.name} (mode={spec.mode}, axis={spec.axis_name}, "
                  f"{len(spec.axis)} points)")
            return 0
        overrides = {"seed": ns.seed, "trials": ns.trials, "out": ns.out}
        spec = load_config(ns.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    try:
        table = run_experiment(spec, threads=ns.threads)
        out = spec.out or f"{spec.name}.csv"
        table.write(out)
        print(f"wrote {out} ({len(table.rows)} rows x {len(table.columns)} cols)")
        if ns.format == "svg":
            svg_path = os.path.splitext(out)[0] + ".svg"
            write_svg(table, svg_path, log_y=(spec.mode == "ser_mc"))
            print(f"wrote {svg_path}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(cli_main())
