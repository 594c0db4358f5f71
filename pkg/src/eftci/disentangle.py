"""Divide-and-conquer search for a site ordering with low left-right entanglement."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cross import TciOptions, ttopt_search
from .oracles import MPSPurity, OracleStats, PurityBackend, fixed_size_decode, fixed_size_oracle
from .seeds import substream
from .states import gen_random_mps

logger = logging.getLogger(__name__)

# evaluations within this relative distance of the best count as ties
TIE_RTOL = 1e-14


class PermutedPurity(PurityBackend):
    """Purities of a state whose sites are relabelled: new site j is original site ``perm[j]``."""

    def __init__(self, backend: PurityBackend, perm: Sequence[int]):
        perm = np.asarray(perm, dtype=np.int64)
        if sorted(perm.tolist()) != list(range(backend.L)):
            raise ValueError("perm must be a permutation of range(L)")
        self.backend = backend
        self.perm = perm
        self.L = backend.L

    def _purities(self, masks):
        orig = np.zeros_like(masks)
        orig[:, self.perm] = masks
        return self.backend.purities(orig)


@dataclass
class Ordering:
    """``perm[j]`` is the original (0-based) site placed at position j."""

    perm: tuple[int, ...]

    def __post_init__(self):
        self.perm = tuple(int(p) for p in self.perm)
        if sorted(self.perm) != list(range(len(self.perm))):
            raise ValueError(f"{self.perm} is not a permutation")


@dataclass
class DisentangleReport:
    ordering: Ordering
    entropy_before: list[float]
    entropy_after: list[float]
    n_queries: int
    splits: list[dict] = field(default_factory=list)

    @property
    def mid_cut(self) -> int:
        return len(self.ordering.perm) // 2

    @property
    def mid_before(self) -> float:
        return self.entropy_before[self.mid_cut - 1]

    @property
    def mid_after(self) -> float:
        return self.entropy_after[self.mid_cut - 1]

    def to_dict(self) -> dict:
        return {
            "perm": [p + 1 for p in self.ordering.perm],
            "cuts": list(range(1, len(self.ordering.perm))),
            "entropy_before": self.entropy_before,
            "entropy_after": self.entropy_after,
            "n_queries": self.n_queries,
            "splits": self.splits,
        }


def prefix_entropies(backend: PurityBackend, perm: Sequence[int]) -> list[float]:
    """Renyi-2 entropy of each left block of the ordering, cuts 1..L-1."""
    L = backend.L
    masks = np.zeros((L - 1, L), dtype=np.int64)
    for c in range(1, L):
        masks[c - 1, list(perm[:c])] = 1
    return [max(float(-np.log(p)), 0.0) for p in backend.purities(masks)]


def best_split(
    backend: PurityBackend,
    pool: Sequence[int],
    k: int,
    rank_cap: int = 2,
    seed: int = 0,
    stats: OracleStats | None = None,
    opts: TciOptions | None = None,
) -> tuple[tuple[int, ...], float]:
    """Size-k subset of ``pool`` with the largest purity found by TTOpt.

    Purities are those of the subset against the whole rest of the system.
    Returns the sorted subset and its purity, re-queried from the backend.
    """
    pool = list(pool)
    if not 1 <= k < len(pool):
        raise ValueError(f"k={k} outside [1, {len(pool)})")
    stats = stats if stats is not None else OracleStats()
    oracle = fixed_size_oracle(backend, pool, k, stats)
    base = opts or TciOptions(max_sweeps=6)
    run_opts = TciOptions(
        tolerance=base.tolerance,
        max_sweeps=base.max_sweeps,
        n_global_search=base.n_global_search,
        max_global_insert=base.max_global_insert,
        seed=seed,
        initial_pivot=base.initial_pivot,
    )
    _, best_value, result = ttopt_search(oracle, oracle.space, rank_cap, run_opts)
    top = abs(best_value)
    candidates = [
        tuple(sorted(fixed_size_decode(np.asarray(idx) + 1, pool)))
        for idx, val in result.evaluations.items()
        if abs(val) >= top * (1 - TIE_RTOL)
    ]
    subset = min(candidates)
    mask = np.zeros(backend.L, dtype=np.int64)
    mask[list(subset)] = 1
    purity = float(backend.purities(mask[None, :])[0])
    with stats._lock:
        stats.total_queries += 1
        stats.distinct_queries += 1
    return subset, purity


def disentangle(
    backend: PurityBackend,
    rank_cap: int = 2,
    seed: int = 0,
    opts: TciOptions | None = None,
) -> DisentangleReport:
    """Recursive halving of the site set by the least entangled half."""
    L = backend.L
    stats = OracleStats()
    splits: list[dict] = []

    def order(pool: list[int]) -> list[int]:
        if len(pool) <= 2:
            return pool
        k = len(pool) // 2
        subset, purity = best_split(backend, pool, k, rank_cap, substream(seed, "tci", *pool), stats, opts)
        rest = [s for s in pool if s not in subset]
        splits.append({"pool": [p + 1 for p in pool], "left": [s + 1 for s in subset], "purity": purity})
        return order(list(subset)) + order(rest)

    perm = order(list(range(L)))
    ordering = Ordering(perm)
    cap = 50 * L**3
    if stats.distinct_queries > cap:
        logger.warning("disentangler used %d queries, above 50 L^3 = %d", stats.distinct_queries, cap)
    return DisentangleReport(
        ordering=ordering,
        entropy_before=prefix_entropies(backend, list(range(L))) if L > 1 else [],
        entropy_after=prefix_entropies(backend, perm) if L > 1 else [],
        n_queries=stats.distinct_queries,
        splits=splits,
    )


def shuffle_benchmark(
    phi: int,
    Ls: Sequence[int],
    n_samples: int = 3,
    seed: int = 0,
    rank_cap: int = 2,
    shuffle: bool = True,
) -> dict:
    """Disentangle randomly shuffled random MPS and compare mid-cut entropies.

    Returns per-L means of the mid-cut Renyi-2 entropy before and after, and
    the linear-fit slopes of both against L.
    """
    rows = []
    for L in Ls:
        before, after, queries = [], [], []
        for s in range(n_samples):
            mps = gen_random_mps(L, phi, substream(seed, "state", L, s))
            rng = np.random.default_rng(substream(seed, "state", L, s, 1))
            perm = rng.permutation(L) if shuffle else np.arange(L)
            backend = PermutedPurity(MPSPurity(mps), perm)
            rep = disentangle(backend, rank_cap, substream(seed, "tci", L, s))
            before.append(rep.mid_before)
            after.append(rep.mid_after)
            queries.append(rep.n_queries)
        rows.append({
            "L": int(L),
            "before": float(np.mean(before)),
            "after": float(np.mean(after)),
            "mean_queries": float(np.mean(queries)),
        })
    Lv = np.array([r["L"] for r in rows], dtype=float)
    out = {"phi": phi, "rows": rows}
    if len(rows) >= 2:
        out["slope_before"] = float(np.polyfit(Lv, [r["before"] for r in rows], 1)[0])
        out["slope_after"] = float(np.polyfit(Lv, [r["after"] for r in rows], 1)[0])
    return out
