"""Seeded i.i.d. entry ensembles and estimators for their tail and anti-concentration behavior.

Entry (i, j) of a sampled matrix is a pure function of (master_seed, trial, i, j),
so trials can be evaluated concurrently in any order and still reproduce
bit-identically: a SplitMix-style avalanche folds the coordinates into a
counter-based stream, and each distribution maps 64-bit words to floats
without rejection loops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfi

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_SPLIT_TAG = 0x8CB92BA72F3D8DD7

#: minimum sample count accepted by the empirical estimators
MIN_SAMPLES = 10_000

#: bisection bracket and iteration count for the psi2 estimator
PSI2_BRACKET = (1e-3, 1e3)
PSI2_ITERATIONS = 60


class ResampleLimitError(RuntimeError):
    """Too many consecutive draws were rejected by a condition guard."""


def _mix(x: np.ndarray) -> np.ndarray:
    # SplitMix64 finalizer; operates on uint64 arrays with wraparound.
    with np.errstate(over="ignore"):
        x = (x ^ (x >> np.uint64(30))) * np.uint64(_MIX1)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(_MIX2)
        return x ^ (x >> np.uint64(31))


def _fold(h, w):
    with np.errstate(over="ignore"):
        return _mix((h ^ w) + np.uint64(_GOLDEN))


def _word(value: int) -> np.ndarray:
    # 0-d uint64 array; keeps the mixing on the (warning-free) array path
    return np.asarray(value & _MASK64, dtype=np.uint64)


def _entry_words(master_seed: int, trial: int, rows: int, cols: int, lane: int) -> np.ndarray:
    """uint64 word for every (i, j) of a rows x cols grid, one lane of the stream."""
    h = _fold(_word(master_seed), _word(trial))
    h = _fold(h, _word(lane))
    i = np.arange(rows, dtype=np.uint64)[:, None]
    j = np.arange(cols, dtype=np.uint64)[None, :]
    return _fold(_fold(h, i), j)


def _unit_open(words: np.ndarray) -> np.ndarray:
    # maps uint64 -> (0, 1]; safe under log()
    return ((words >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53


def _unit_half_open(words: np.ndarray) -> np.ndarray:
    # maps uint64 -> [0, 1)
    return (words >> np.uint64(11)).astype(np.float64) * 2.0**-53


@dataclass(frozen=True)
class SeedPath:
    """Address of a reproducible stream: distinct paths give independent draws."""

    master_seed: int
    trial: int = 0

    def __post_init__(self):
        if not isinstance(self.master_seed, int) or not isinstance(self.trial, int):
            raise TypeError("master_seed and trial must be integers")
        if self.trial < 0:
            raise ValueError("trial must be non-negative")

    def with_trial(self, trial: int) -> "SeedPath":
        return SeedPath(self.master_seed, trial)

    def split(self, tag: int) -> "SeedPath":
        """Derive an independent sub-stream, keeping the trial index."""
        word = _fold(_word(self.master_seed), _word(tag ^ _SPLIT_TAG))
        return SeedPath(int(word), self.trial)


@dataclass(frozen=True)
class EntryDistribution:
    """Entry law, normalized to mean 0 and variance 1.

    kinds: "gaussian", "rademacher", "uniform" (on [-sqrt(3), sqrt(3)]), and
    "lattice" with ``lattice_m`` >= 2 equally spaced centered atoms.
    """

    kind: str
    lattice_m: int = 0

    def __post_init__(self):
        if self.kind not in ("gaussian", "rademacher", "uniform", "lattice"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "lattice":
            if self.lattice_m < 2:
                raise ValueError("lattice requires at least 2 atoms")
        elif self.lattice_m != 0:
            raise ValueError("lattice_m is only meaningful for kind='lattice'")

    @classmethod
    def from_name(cls, name: str) -> "EntryDistribution":
        """Parse CLI-style names: "gaussian", "rademacher", "uniform", "lattice:m"."""
        if name.startswith("lattice:"):
            try:
                m = int(name.split(":", 1)[1])
            except ValueError:
                raise ValueError(f"bad lattice atom count in {name!r}") from None
            return cls("lattice", m)
        return cls(name)

    @property
    def name(self) -> str:
        if self.kind == "lattice":
            return f"lattice:{self.lattice_m}"
        return self.kind

    def atoms(self) -> np.ndarray | None:
        """Support of a discrete kind, or None for continuous kinds."""
        if self.kind == "rademacher":
            return np.array([-1.0, 1.0])
        if self.kind == "lattice":
            m = self.lattice_m
            centered = np.arange(m, dtype=np.float64) - (m - 1) / 2.0
            return centered / math.sqrt((m * m - 1) / 12.0)
        return None

    def fourth_moment(self) -> float:
        if self.kind == "gaussian":
            return 3.0
        if self.kind == "uniform":
            return 9.0 / 5.0
        return float(np.mean(self.atoms() ** 4))

    def analytic_psi2(self) -> float:
        """Exact psi2 norm, from the closed-form moment where one exists."""
        if self.kind == "gaussian":
            # E exp(Z^2 / lam^2) = (1 - 2/lam^2)^(-1/2) = 2  =>  lam = sqrt(8/3)
            return math.sqrt(8.0 / 3.0)
        if self.kind == "rademacher":
            return 1.0 / math.sqrt(math.log(2.0))
        if self.kind == "uniform":
            # E exp(Z^2/lam^2) = lam * sqrt(pi) / (2 sqrt(3)) * erfi(sqrt(3)/lam)
            def moment(lam):
                with np.errstate(over="ignore"):
                    return lam * math.sqrt(math.pi) / (2 * math.sqrt(3.0)) * float(
                        erfi(math.sqrt(3.0) / lam)
                    )
        else:
            atoms = self.atoms()

            def moment(lam):
                with np.errstate(over="ignore"):
                    return float(np.mean(np.exp((atoms / lam) ** 2)))

        return _bisect_decreasing(moment, 2.0, *PSI2_BRACKET)


@dataclass(frozen=True)
class EnsembleSpec:
    """Shape, entry law, and the sub-gaussian/anti-concentration parameters (K, p, s)."""

    dist: EntryDistribution
    rows: int
    cols: int
    psi2_bound: float
    conc_scale: float = 0.0
    conc_level: float = 0.0

    def __post_init__(self):
        if not self.rows >= self.cols >= 1:
            raise ValueError(f"need rows >= cols >= 1, got {self.rows}x{self.cols}")
        if not self.psi2_bound > 0.0:
            raise ValueError("psi2_bound must be positive")
        if self.conc_scale < 0.0 or self.conc_level < 0.0:
            raise ValueError("conc_scale and conc_level must be non-negative")

    @property
    def square(self) -> bool:
        return self.rows == self.cols


def make_spec(dist: EntryDistribution, rows: int, cols: int | None = None, *,
              psi2_bound: float | None = None, conc_scale: float = 0.0,
              conc_level: float = 0.0) -> EnsembleSpec:
    """EnsembleSpec with the analytic psi2 norm as the default bound K."""
    if cols is None:
        cols = rows
    if psi2_bound is None:
        psi2_bound = dist.analytic_psi2()
    return EnsembleSpec(dist, rows, cols, psi2_bound, conc_scale, conc_level)


def sample_array(dist: EntryDistribution, rows: int, cols: int, seed: SeedPath) -> np.ndarray:
    """rows x cols array of i.i.d. draws; entry (i, j) depends only on the path and (i, j)."""
    if rows < 1 or cols < 1:
        raise ValueError(f"need positive dimensions, got {rows}x{cols}")
    master, trial = seed.master_seed, seed.trial
    if dist.kind == "gaussian":
        u1 = _unit_open(_entry_words(master, trial, rows, cols, 0))
        u2 = _unit_half_open(_entry_words(master, trial, rows, cols, 1))
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)
    words = _entry_words(master, trial, rows, cols, 0)
    if dist.kind == "rademacher":
        return np.where(words >> np.uint64(63), 1.0, -1.0)
    u = _unit_half_open(words)
    if dist.kind == "uniform":
        return (u - 0.5) * math.sqrt(12.0)
    idx = np.minimum((u * dist.lattice_m).astype(np.int64), dist.lattice_m - 1)
    return dist.atoms()[idx]


def sample_matrix(spec: EnsembleSpec, seed: SeedPath) -> np.ndarray:
    """Seeded draw of the full matrix described by the spec."""
    return sample_array(spec.dist, spec.rows, spec.cols, seed)


def sample_vector(dist: EntryDistribution, n: int, seed: SeedPath) -> np.ndarray:
    return sample_array(dist, n, 1, seed).ravel()


def _bisect_decreasing(fn, target, lo, hi, iterations=PSI2_ITERATIONS):
    # fn is non-increasing; find the smallest argument with fn(arg) <= target.
    if fn(hi) > target:
        raise ValueError(
            f"moment stays above {target} on the whole bracket; "
            "the distribution looks heavier-tailed than psi2 admits"
        )
    if fn(lo) <= target:
        return lo
    for _ in range(iterations):
        mid = math.sqrt(lo * hi)
        if fn(mid) <= target:
            hi = mid
        else:
            lo = mid
    return hi


def psi2_of_sample(sample: np.ndarray, theta: float = 2.0) -> float:
    """Empirical psi_theta norm: smallest lambda with mean exp((|Z|/lambda)^theta) <= 2."""
    abs_z = np.abs(np.asarray(sample, dtype=np.float64))

    def moment(lam):
        with np.errstate(over="ignore"):
            return float(np.mean(np.exp((abs_z / lam) ** theta)))

    return _bisect_decreasing(moment, 2.0, *PSI2_BRACKET)


def psi2_estimate(dist: EntryDistribution, n_samples: int, seed: SeedPath,
                  theta: float = 2.0) -> float:
    """Monte Carlo psi_theta norm of the entry law (only theta=2 is exercised)."""
    if n_samples < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples, got {n_samples}")
    return psi2_of_sample(sample_vector(dist, n_samples, seed), theta)


def levy_of_sample(sample: np.ndarray, t: float) -> float:
    """Sliding-window estimate of sup_u P(|Z - u| <= t) on a fixed sample.

    The maximizing window can always be shifted until its left edge touches a
    sample point, so scanning windows [x_i, x_i + 2t] over the sorted sample
    is exact for the empirical measure.
    """
    if t < 0.0:
        raise ValueError("window radius t must be non-negative")
    x = np.sort(np.asarray(sample, dtype=np.float64))
    right = np.searchsorted(x, x + 2.0 * t, side="right")
    counts = right - np.arange(x.size)
    return float(counts.max()) / x.size


def levy_concentration(dist: EntryDistribution, t: float, n_samples: int,
                       seed: SeedPath) -> float:
    """Monte Carlo Levy concentration function of the entry law at radius t."""
    if n_samples < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples, got {n_samples}")
    return levy_of_sample(sample_vector(dist, n_samples, seed), t)


@dataclass(frozen=True)
class AssumptionReport:
    mean_ok: bool
    var_ok: bool
    psi2_ok: bool
    conc_ok: bool
    sample_mean: float
    sample_second_moment: float
    psi2: float
    witness_s: float | None

    @property
    def all_ok(self) -> bool:
        return self.mean_ok and self.var_ok and self.psi2_ok and self.conc_ok


#: geometric grid for the anti-concentration scan spans three decades below s0
CONC_GRID_SIZE = 20
CONC_GRID_DECADES = 3.0


def validate_assumption(spec: EnsembleSpec, s0: float, n_samples: int,
                        seed: SeedPath) -> AssumptionReport:
    """Empirical check of the entry-law hypotheses: moments, psi2 bound, and
    existence of a scale s <= s0 with concentration L(Z, s) <= p * s.

    Moment checks use 3-sigma bands from the analytic moments (the second
    moment is used as the variance estimate since the law has exact mean 0);
    the concentration scan walks a geometric grid of CONC_GRID_SIZE scales and
    reports the largest witnessing s, if any.
    """
    if s0 <= 0.0:
        raise ValueError("s0 must be positive")
    if n_samples < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples, got {n_samples}")
    sample = sample_vector(spec.dist, n_samples, seed)
    mean = float(sample.mean())
    second = float(np.mean(sample * sample))
    mean_ok = abs(mean) <= 3.0 / math.sqrt(n_samples)
    var_band = 3.0 * math.sqrt(max(spec.dist.fourth_moment() - 1.0, 0.0) / n_samples)
    var_ok = abs(second - 1.0) <= var_band + 1e-9
    psi2 = psi2_of_sample(sample)
    psi2_ok = psi2 <= spec.psi2_bound * 1.1

    witness = None
    p = spec.conc_level
    for k in range(CONC_GRID_SIZE):
        s = s0 * 10.0 ** (-CONC_GRID_DECADES * k / (CONC_GRID_SIZE - 1))
        if levy_of_sample(sample, s) <= p * s:
            witness = s
            break
    return AssumptionReport(
        mean_ok=mean_ok,
        var_ok=var_ok,
        psi2_ok=psi2_ok,
        conc_ok=witness is not None,
        sample_mean=mean,
        sample_second_moment=second,
        psi2=psi2,
        witness_s=witness,
    )
