"""Seeded Monte Carlo experiments over the singular-value behavior of i.i.d. ensembles.

Each experiment evaluates independent per-trial statistics (a pure function of
the config and the trial index), then reduces them in trial order, so reports
are bit-identical for any order-preserving ``map_fn`` and any worker count.
Thresholded events share the per-trial draws: nested events are exactly
monotone in their threshold, not just statistically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import beta
from threadpoolctl import threadpool_limits

from .ensembles import (
    EnsembleSpec,
    EntryDistribution,
    ResampleLimitError,
    SeedPath,
    sample_array,
    sample_matrix,
    sample_vector,
)
from .linalg import (
    RankDeficiencyError,
    as_matrix,
    dist_to_subspace,
    matrix_norms,
    orthonormal_basis,
    singular_values,
)

CI_ALPHA = 0.05
PROBE_CANDIDATES = 100
MAX_RESAMPLES = 10

_RESAMPLE_TAG = 0x52455452
_Z_TAG = 1
_SPAN_TAG = 2
_DRAW_TAG = 4


class ConfigError(ValueError):
    """An experiment configuration violates its declared constraints."""


@dataclass(frozen=True)
class TailEstimate:
    """Binomial estimate of one thresholded event with an exact 95% interval."""

    threshold: float
    successes: int
    trials: int
    point: float
    ci_low: float
    ci_high: float
    resamples: int = 0


def clopper_pearson(successes: int, trials: int, alpha: float = CI_ALPHA):
    """Exact two-sided binomial confidence interval (valid at zero successes)."""
    if not 0 <= successes <= trials:
        raise ValueError(f"need 0 <= successes <= trials, got {successes}/{trials}")
    lo = 0.0 if successes == 0 else float(beta.ppf(alpha / 2, successes, trials - successes + 1))
    hi = 1.0 if successes == trials else float(beta.ppf(1 - alpha / 2, successes + 1, trials - successes))
    return lo, hi


def tail_estimate(threshold: float, successes: int, trials: int,
                  resamples: int = 0) -> TailEstimate:
    lo, hi = clopper_pearson(successes, trials)
    return TailEstimate(
        threshold=float(threshold),
        successes=int(successes),
        trials=int(trials),
        point=successes / trials,
        ci_low=lo,
        ci_high=hi,
        resamples=resamples,
    )


@dataclass(frozen=True)
class ExperimentConfig:
    """Inputs shared by the experiment drivers; output routing is used by the CLI."""

    spec: EnsembleSpec
    trials: int
    master_seed: int
    l_values: tuple[int, ...] = ()
    t_values: tuple[float, ...] = ()
    eps_values: tuple[float, ...] = ()
    out_path: str | None = None
    out_format: str = "csv"

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError(f"trials must be at least 1, got {self.trials}")
        for l in self.l_values:
            if not 1 <= l <= self.spec.rows:
                raise ConfigError(f"l={l} outside [1, {self.spec.rows}]")
        if self.out_format not in ("csv", "json"):
            raise ConfigError(f"format must be csv or json, got {self.out_format!r}")


def _run_trials(fn, jobs, map_fn):
    # Single-threaded BLAS per call keeps results independent of how many
    # worker threads the caller's map_fn multiplexes over the trials.
    with threadpool_limits(limits=1, user_api="blas"):
        return list(map_fn(fn, jobs))


@dataclass(frozen=True)
class ScalingCell:
    l: int
    trials: int
    median_sv: float
    ratio: float      # median * sqrt(n) / l
    q25: float
    q75: float


@dataclass(frozen=True)
class ScalingReport:
    n: int
    cells: tuple[ScalingCell, ...]
    loglog_slope: float
    loglog_intercept: float


def scaling_experiment(cfg: ExperimentConfig, map_fn=map) -> ScalingReport:
    """Medians of the l-th smallest singular values against the l/sqrt(n) law.

    One decomposition per trial serves every requested l; the log-log fit of
    median against l exposes the scaling exponent.
    """
    spec = cfg.spec
    if not spec.square:
        raise ConfigError("scaling_experiment requires a square ensemble")
    if not cfg.l_values:
        raise ConfigError("scaling_experiment needs at least one l value")
    n = spec.rows
    l_values = cfg.l_values

    def one_trial(trial):
        s = singular_values(sample_matrix(spec, SeedPath(cfg.master_seed, trial)))
        return [s[n - l] for l in l_values]

    values = np.asarray(_run_trials(one_trial, range(cfg.trials), map_fn))
    cells = []
    for idx, l in enumerate(l_values):
        med = float(np.median(values[:, idx]))
        q25, q75 = np.percentile(values[:, idx], [25.0, 75.0])
        cells.append(ScalingCell(
            l=l,
            trials=cfg.trials,
            median_sv=med,
            ratio=med * math.sqrt(n) / l,
            q25=float(q25),
            q75=float(q75),
        ))
    logs = np.log([c.l for c in cells]), np.log([c.median_sv for c in cells])
    slope, intercept = np.polyfit(logs[0], logs[1], 1)
    return ScalingReport(
        n=n,
        cells=tuple(cells),
        loglog_slope=float(slope),
        loglog_intercept=float(intercept),
    )


@dataclass(frozen=True)
class TailReport:
    n: int
    l: int
    c1: float
    estimates: tuple[TailEstimate, ...]
    fitted_c2: float | None


def tail_experiment(cfg: ExperimentConfig, l: int, c1: float = 1.0,
                    map_fn=map) -> TailReport:
    """Exceedance probabilities P(s_{n+1-l} > c1 t l / sqrt(n)) over the t grid.

    All thresholds are applied to the same per-trial draws, so the estimates
    are non-increasing in t by construction. The fitted decay constant is the
    negated slope of log(point) against t*l over cells with at least 5
    successes (None when fewer than two such cells exist).
    """
    spec = cfg.spec
    if not spec.square:
        raise ConfigError("tail_experiment requires a square ensemble")
    if not 1 <= l <= spec.rows:
        raise ConfigError(f"l={l} outside [1, {spec.rows}]")
    if not cfg.t_values:
        raise ConfigError("tail_experiment needs t values")
    t_values = cfg.t_values
    if any(t <= 1.0 for t in t_values):
        raise ConfigError("all t values must exceed 1")
    if any(b <= a for a, b in zip(t_values, t_values[1:])):
        raise ConfigError("t values must be strictly increasing")
    n = spec.rows

    def one_trial(trial):
        s = singular_values(sample_matrix(spec, SeedPath(cfg.master_seed, trial)))
        return s[n - l]

    values = np.asarray(_run_trials(one_trial, range(cfg.trials), map_fn))
    estimates = []
    for t in t_values:
        cutoff = c1 * t * l / math.sqrt(n)
        estimates.append(tail_estimate(t, int(np.sum(values > cutoff)), cfg.trials))

    fitted = [(e.threshold * l, e.point) for e in estimates if e.successes >= 5]
    fitted_c2 = None
    if len(fitted) >= 2:
        xs, ps = zip(*fitted)
        slope = np.polyfit(xs, np.log(ps), 1)[0]
        fitted_c2 = float(-slope)
    return TailReport(n=n, l=l, c1=c1, estimates=tuple(estimates), fitted_c2=fitted_c2)


def sandwich_experiment(cfg: ExperimentConfig, l: int, c_low: float,
                        c_high: float, map_fn=map) -> TailEstimate:
    """Probability that s_{n+1-l} lands inside [c_low, c_high] * l / sqrt(n)."""
    spec = cfg.spec
    if not spec.square:
        raise ConfigError("sandwich_experiment requires a square ensemble")
    if not 1 <= l <= spec.rows:
        raise ConfigError(f"l={l} outside [1, {spec.rows}]")
    if not c_low < c_high:
        raise ConfigError(f"need c_low < c_high, got {c_low} >= {c_high}")
    n = spec.rows
    scale = l / math.sqrt(n)

    def one_trial(trial):
        s = singular_values(sample_matrix(spec, SeedPath(cfg.master_seed, trial)))
        return s[n - l]

    values = np.asarray(_run_trials(one_trial, range(cfg.trials), map_fn))
    hits = int(np.sum((values >= c_low * scale) & (values <= c_high * scale)))
    return tail_estimate(c_high, hits, cfg.trials)


def minsv_lowerbound_experiment(cfg: ExperimentConfig, map_fn=map) -> tuple[TailEstimate, ...]:
    """P(s_min(G) <= eps (sqrt(N) - sqrt(n-1))) for a tall N x n ensemble."""
    spec = cfg.spec
    if not cfg.eps_values:
        raise ConfigError("minsv experiment needs eps values")
    if any(e < 0.0 for e in cfg.eps_values):
        raise ConfigError("eps values must be non-negative")
    scale = math.sqrt(spec.rows) - math.sqrt(spec.cols - 1)

    def one_trial(trial):
        return singular_values(sample_matrix(spec, SeedPath(cfg.master_seed, trial)))[-1]

    values = np.asarray(_run_trials(one_trial, range(cfg.trials), map_fn))
    return tuple(
        tail_estimate(e, int(np.sum(values <= e * scale)), cfg.trials)
        for e in cfg.eps_values
    )


@dataclass(frozen=True)
class DistanceReport:
    ambient_dim: int
    codim: int                      # m = dimension of the orthogonal complement
    median_ratio: float             # median dist / sqrt(m)
    estimates: tuple[TailEstimate, ...]
    resamples: int


def distance_experiment(dist: EntryDistribution, ambient_dim: int, m: int,
                        eps_values, trials: int, master_seed: int,
                        shift=None, map_fn=map) -> DistanceReport:
    """Distance from a random vector to an independent random affine subspace.

    Draws Z in R^N and a span of N - m i.i.d. columns per trial, then
    estimates P(dist(Z, H + shift) < eps sqrt(m)) for each eps on shared
    draws. Rank-deficient spans are resampled (counted), up to MAX_RESAMPLES.
    """
    if not 0 < m < ambient_dim:
        raise ConfigError(f"need 0 < m < N, got m={m}, N={ambient_dim}")
    if trials < 1:
        raise ConfigError("trials must be at least 1")
    eps_values = tuple(float(e) for e in eps_values)
    if any(e < 0.0 for e in eps_values):
        raise ConfigError("eps values must be non-negative")
    shift_vec = None if shift is None else np.asarray(shift, dtype=np.float64)

    def one_trial(trial):
        path = SeedPath(master_seed, trial)
        z = sample_vector(dist, ambient_dim, path.split(_Z_TAG))
        resamples = 0
        span_path = path.split(_SPAN_TAG)
        while True:
            try:
                basis = orthonormal_basis(
                    sample_array(dist, ambient_dim, ambient_dim - m, span_path)
                )
                break
            except RankDeficiencyError:
                resamples += 1
                if resamples > MAX_RESAMPLES:
                    raise ResampleLimitError(
                        f"exceeded {MAX_RESAMPLES} resamples for a full-rank span"
                    ) from None
                span_path = path.split(_RESAMPLE_TAG + resamples)
        return dist_to_subspace(z, basis, shift_vec), resamples

    results = _run_trials(one_trial, range(trials), map_fn)
    values = np.asarray([r[0] for r in results])
    total_resamples = sum(r[1] for r in results)
    root_m = math.sqrt(m)
    estimates = tuple(
        tail_estimate(e, int(np.sum(values < e * root_m)), trials, total_resamples)
        for e in eps_values
    )
    return DistanceReport(
        ambient_dim=ambient_dim,
        codim=m,
        median_ratio=float(np.median(values)) / root_m,
        estimates=estimates,
        resamples=total_resamples,
    )


PROBE_MODES = ("sum", "projection", "anisotropic", "vector_norm", "product_norm")


@dataclass(frozen=True)
class ProbeReport:
    mode: str
    radius: float                 # ball radius / deviation / norm bound tested
    estimate: TailEstimate
    detail: dict


def _require(params: dict, key: str, mode: str):
    if key not in params:
        raise ConfigError(f"probe mode {mode!r} requires parameter {key!r}")
    return params[key]


def _best_center_count(points: np.ndarray, radius: float) -> int:
    """Largest number of sample points within ``radius`` of any of the first
    PROBE_CANDIDATES sample points (a lower bound on the best center)."""
    candidates = points[:PROBE_CANDIDATES]
    # pairwise squared distances, trials x candidates
    d_sq = (
        (points * points).sum(axis=1)[:, None]
        - 2.0 * points @ candidates.T
        + (candidates * candidates).sum(axis=1)[None, :]
    )
    return int((d_sq <= radius * radius + 1e-12).sum(axis=0).max())


def concentration_probe(mode: str, params: dict, trials: int,
                        master_seed: int, map_fn=map) -> ProbeReport:
    """Small-ball and norm-concentration probes (see PROBE_MODES).

    The vector modes report the best small-ball fraction over a grid of
    sampled candidate centers, which lower-bounds the true supremum; the
    scalar sum mode slides an exact window over the sorted sample.
    """
    if mode not in PROBE_MODES:
        raise ConfigError(f"unknown probe mode {mode!r}")
    if trials < 1:
        raise ConfigError("trials must be at least 1")
    dist = _require(params, "dist", mode)
    path = SeedPath(master_seed, 0)

    if mode == "sum":
        coeffs = np.asarray(_require(params, "coefficients", mode), dtype=np.float64)
        t = float(_require(params, "t", mode))
        if abs(np.sum(coeffs**2) - 1.0) > 1e-9:
            raise ConfigError("sum mode needs coefficients with sum of squares 1")
        z = sample_array(dist, trials, coeffs.size, path)
        sums = np.sort(z @ coeffs)
        right = np.searchsorted(sums, sums + 2.0 * t, side="right")
        successes = int((right - np.arange(trials)).max())
        detail = {"window_radius": t}
        return ProbeReport(mode, t, tail_estimate(t, successes, trials), detail)

    if mode in ("projection", "anisotropic"):
        t = float(_require(params, "t", mode))
        if mode == "projection":
            n = int(_require(params, "ambient_dim", mode))
            d = int(_require(params, "proj_dim", mode))
            if not 1 <= d <= n:
                raise ConfigError(f"need 1 <= proj_dim <= ambient_dim, got {d}, {n}")
            basis = params.get("basis")
            if basis is None:
                basis = np.eye(n)[:, :d]  # coordinate projector
            else:
                basis = as_matrix(basis, "basis")
            radius = t * math.sqrt(d)
            images = sample_array(dist, trials, n, path) @ basis
        else:
            d_matrix = as_matrix(_require(params, "matrix", mode), "matrix")
            norms = matrix_norms(d_matrix)
            radius = t * norms.hilbert_schmidt
            images = sample_array(dist, trials, d_matrix.shape[1], path) @ d_matrix.T
        successes = _best_center_count(images, radius)
        detail = {"ball_radius": radius, "candidates": min(PROBE_CANDIDATES, trials)}
        return ProbeReport(mode, radius, tail_estimate(radius, successes, trials), detail)

    if mode == "vector_norm":
        d_matrix = as_matrix(_require(params, "matrix", mode), "matrix")
        t = float(_require(params, "t", mode))
        center = matrix_norms(d_matrix).hilbert_schmidt
        z = sample_array(dist, trials, d_matrix.shape[1], path)
        deviations = np.abs(np.linalg.norm(z @ d_matrix.T, axis=1) - center)
        successes = int(np.sum(deviations > t))
        q50, q90, q99 = np.percentile(deviations, [50.0, 90.0, 99.0])
        detail = {
            "norm_center": center,
            "dev_q50": float(q50),
            "dev_q90": float(q90),
            "dev_q99": float(q99),
            "dev_max": float(deviations.max()),
        }
        return ProbeReport(mode, t, tail_estimate(t, successes, trials), detail)

    # product_norm
    d_matrix = as_matrix(_require(params, "matrix", mode), "matrix")
    k = int(_require(params, "k", mode))
    s = float(_require(params, "s", mode))
    t = float(_require(params, "t", mode))
    if k < 1:
        raise ConfigError("product_norm needs k >= 1")
    norms = matrix_norms(d_matrix)
    bound = s * norms.hilbert_schmidt + t * math.sqrt(k) * norms.operator
    inner = d_matrix.shape[1]

    def one_trial(trial):
        g = sample_array(dist, inner, k, SeedPath(master_seed, trial).split(_DRAW_TAG))
        return float(singular_values(d_matrix @ g)[0])

    values = np.asarray(_run_trials(one_trial, range(trials), map_fn))
    successes = int(np.sum(values > bound))
    q50, q90, q99 = np.percentile(values, [50.0, 90.0, 99.0])
    detail = {
        "norm_bound": bound,
        "op_q50": float(q50),
        "op_q90": float(q90),
        "op_q99": float(q99),
        "op_max": float(values.max()),
    }
    return ProbeReport(mode, bound, tail_estimate(bound, successes, trials), detail)


def rectangular_augmentation(a, spec: EnsembleSpec, seed: SeedPath) -> np.ndarray:
    """Append fresh i.i.d. columns to an n x (n-k) matrix, giving a square n x n.

    The input lands bit-exactly in the first n-k columns; the fresh columns
    reuse the square index layout, so augmenting a matrix drawn from the same
    seed reproduces the square draw of that seed. Singular values interlace:
    s_j of the output dominates s_j of the input for every j.
    """
    a = as_matrix(a)
    n, cols = a.shape
    if cols > n:
        raise ValueError(f"expected rows >= cols, got {a.shape}")
    if (spec.rows, spec.cols) != (n, cols):
        raise ValueError(
            f"spec shape {spec.rows}x{spec.cols} does not match input {n}x{cols}"
        )
    if cols == n:
        return a
    fresh = sample_array(spec.dist, n, n, seed)
    return np.concatenate([a, fresh[:, cols:]], axis=1)
