"""Greedy separated-set nets on spheres, with sampling certificates.

A maximal eps-separated subset of the sphere is an eps-net, so the builder
accepts uniform sphere points greedily and stops once `budget` consecutive
candidates land within eps of an accepted point. covering_check() then
certifies the covering radius empirically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ensembles import EntryDistribution, SeedPath, sample_array

MAX_NET_DIM = 8
MIN_BUDGET = 1_000
MIN_PROBES = 1_000

_GAUSS = EntryDistribution("gaussian")
_BLOCK = 512


@dataclass(frozen=True)
class EpsNet:
    dim: int
    eps: float
    points: np.ndarray        # count x dim, unit rows, pairwise distances >= eps
    rejection_streak: int     # consecutive rejections at stop time (maximality certificate)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def cardinality_bound(self) -> float:
        """The volumetric ceiling (3/eps)^dim."""
        return (3.0 / self.eps) ** self.dim


def sphere_points(dim: int, count: int, seed: SeedPath) -> np.ndarray:
    """count uniform points on the unit sphere, by normalizing gaussian rows."""
    x = sample_array(_GAUSS, count, dim, seed)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    # a zero gaussian row has probability 0; nudge to keep the map total
    norms[norms == 0.0] = 1.0
    return x / norms


def build_net(dim: int, eps: float, seed: SeedPath, budget: int) -> EpsNet:
    """Greedy maximal eps-separated set on S^(dim-1).

    Candidates are streamed from the seeded sphere sampler; construction stops
    after `budget` consecutive rejections, which certifies approximate
    maximality (and hence the covering property).
    """
    if not 1 <= dim <= MAX_NET_DIM:
        raise ValueError(f"dim must lie in [1, {MAX_NET_DIM}], got {dim}")
    if not 0.0 < eps <= 2.0:
        raise ValueError(f"eps must lie in (0, 2], got {eps}")
    if budget < MIN_BUDGET:
        raise ValueError(f"budget below {MIN_BUDGET} makes the certificate meaningless")

    points = np.empty((0, dim))
    streak = 0
    block = 0
    eps_sq = eps * eps
    while streak < budget:
        cands = sphere_points(dim, _BLOCK, seed.split(block))
        block += 1
        if points.shape[0]:
            # batch-reject against the points accepted before this block;
            # survivors still run sequentially against within-block accepts,
            # preserving the stream order of accept/reject decisions
            d_sq = 2.0 - 2.0 * (cands @ points.T).max(axis=1)
            alive = d_sq >= eps_sq
        else:
            alive = np.ones(len(cands), dtype=bool)
        fresh_start = points.shape[0]
        for idx, cand in enumerate(cands):
            if not alive[idx]:
                streak += 1
                if streak >= budget:
                    break
                continue
            if points.shape[0] > fresh_start:
                diff = points[fresh_start:] - cand
                if (diff * diff).sum(axis=1).min() < eps_sq:
                    streak += 1
                    if streak >= budget:
                        break
                    continue
            points = np.vstack([points, cand[None, :]])
            streak = 0
    return EpsNet(dim=dim, eps=eps, points=points, rejection_streak=streak)


def covering_check(net: EpsNet, n_probes: int, seed: SeedPath) -> float:
    """Largest distance from a sampled sphere point to the net.

    A value <= net.eps certifies (empirically) that the separated set covers.
    """
    if n_probes < MIN_PROBES:
        raise ValueError(f"need at least {MIN_PROBES} probes, got {n_probes}")
    probes = sphere_points(net.dim, n_probes, seed)
    # |p - q|^2 = 2 - 2 <p, q> for unit vectors
    inner = probes @ net.points.T
    d_sq = np.maximum(2.0 - 2.0 * inner.max(axis=1), 0.0)
    return float(np.sqrt(d_sq.max()))
