"""Matrix cross interpolation, two-site tensor cross interpolation and TTOpt.

Oracles are batch callables: ``oracle(indices)`` receives an integer array of
shape ``(n, N)`` and returns ``n`` real values.
"""
from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .tt import SV_CUTOFF, TensorTrain, tt_eval_batch

logger = logging.getLogger(__name__)

MultiIndex = tuple[int, ...]
Oracle = Callable[[np.ndarray], np.ndarray]

MAX_PIVOT_CONDITION = 1e12


@dataclass(frozen=True)
class IndexSpace:
    dims: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if len(self.dims) == 0:
            raise ValueError("index space needs at least one position")
        if any(d < 1 for d in self.dims):
            raise ValueError(f"all dims must be >= 1, got {self.dims}")

    def __len__(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return int(np.prod([float(d) for d in self.dims]))


@dataclass
class TciOptions:
    tolerance: float = 1e-12
    max_rank: int | None = None
    max_sweeps: int = 4000
    n_global_search: int = 2
    max_global_insert: int = 2
    seed: int = 0
    initial_pivot: Sequence[int] | str | None = None

    def __post_init__(self):
        if self.tolerance < 0:
            raise ValueError("tolerance must be >= 0")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")
        if self.max_rank is not None and self.max_rank < 1:
            raise ValueError("max_rank must be >= 1")


@dataclass
class PivotState:
    """Nested pivot sets: ``I[p]`` indexes positions ``0..p-1``, ``J[p]`` positions ``p..N-1``."""

    I: list[list[MultiIndex]]
    J: list[list[MultiIndex]]

    @property
    def ranks(self) -> tuple[int, ...]:
        n = len(self.I)
        return (1,) + tuple(len(self.I[p]) for p in range(1, n)) + (1,)

    def copy(self) -> "PivotState":
        return PivotState([list(s) for s in self.I], [list(s) for s in self.J])

    def pivot_indices(self) -> list[MultiIndex]:
        """Every full multi-index composed from a row and column pivot of one bond."""
        out = []
        for p in range(1, len(self.I)):
            out.extend(i + j for i in self.I[p] for j in self.J[p])
        return out


@dataclass
class TciResult:
    tt: TensorTrain
    pivots: PivotState
    n_queries: int
    converged: bool
    max_local_error: float
    n_sweeps: int = 0
    error_history: list[float] = field(default_factory=list)
    rank_history: list[tuple[int, ...]] = field(default_factory=list)
    evaluations: dict = field(default_factory=dict, repr=False)

    @property
    def ranks(self) -> tuple[int, ...]:
        return self.tt.ranks

    def sidecar(self, seed: int | None = None) -> dict:
        return {
            "n_queries": self.n_queries,
            "converged": self.converged,
            "ranks": list(self.ranks),
            "max_local_error": self.max_local_error,
            "seed": seed,
        }


def vectorize_oracle(func: Callable[[MultiIndex], float]) -> Oracle:
    """Turn a per-index function into a batch oracle."""

    def batch(indices):
        return np.array([func(tuple(int(i) for i in row)) for row in indices], dtype=float)

    return batch


class _CachedFunction:
    """Exact memo of oracle values keyed by multi-index; counts distinct queries."""

    def __init__(self, oracle: Oracle, n_sites: int):
        self.oracle = oracle
        self.n_sites = n_sites
        self.values: dict[MultiIndex, float] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.values)

    def __call__(self, keys: Sequence[MultiIndex]) -> np.ndarray:
        missing = list(dict.fromkeys(k for k in keys if k not in self.values))
        if missing:
            vals = np.asarray(self.oracle(np.array(missing, dtype=np.int64).reshape(-1, self.n_sites)), dtype=float)
            if vals.shape != (len(missing),):
                raise ValueError(f"oracle returned shape {vals.shape}, expected ({len(missing)},)")
            bad = ~np.isfinite(vals)
            if np.any(bad):
                raise ValueError(f"oracle returned non-finite value at index {missing[int(np.argmax(bad))]}")
            with self._lock:
                self.values.update(zip(missing, vals.tolist()))
        return np.array([self.values[k] for k in keys], dtype=float)


def _full_pivot_lu(a: np.ndarray, tol: float, max_rank: int | None) -> tuple[list[int], list[int], float]:
    """Greedy partial LU with complete pivoting.

    Returns pivot rows, pivot columns (in selection order) and the largest
    remaining Schur-complement entry, which is the max-norm interpolation error.
    Ties go to the smallest (row, col) pair.
    """
    res = np.array(a, dtype=float)
    m, n = res.shape
    limit = min(m, n) if max_rank is None else min(m, n, max_rank)
    rows: list[int] = []
    cols: list[int] = []
    first = 0.0
    rel_tol = max(tol, SV_CUTOFF)
    while True:
        flat = int(np.argmax(np.abs(res)))
        i, j = divmod(flat, n)
        mag = abs(res[i, j])
        if not rows:
            if mag == 0.0:
                return [], [], 0.0
            first = mag
        elif len(rows) >= limit or mag <= rel_tol * first:
            return rows, cols, float(mag)
        rows.append(i)
        cols.append(j)
        res -= np.outer(res[:, j], res[i, :]) / res[i, j]
        res[i, :] = 0.0
        res[:, j] = 0.0


def matrix_ci(getter, n_rows: int, n_cols: int, tol: float = 1e-12, max_rank: int | None = None):
    """Cross interpolation ``A[:, cols] A[rows, cols]^-1 A[rows, :]`` of a matrix.

    ``getter`` is either a function ``(row, col) -> float`` or a dense array.
    Returns ``(rows, cols, error_estimate)`` where the error estimate is the
    largest absolute entry of the interpolation residual.
    """
    if n_rows < 1 or n_cols < 1:
        raise ValueError("matrix must have at least one row and one column")
    if callable(getter):
        a = np.array([[getter(i, j) for j in range(n_cols)] for i in range(n_rows)], dtype=float)
    else:
        a = np.asarray(getter, dtype=float)
        if a.shape != (n_rows, n_cols):
            raise ValueError(f"matrix shape {a.shape} does not match ({n_rows}, {n_cols})")
    return _full_pivot_lu(a, tol, max_rank)


def cross_reconstruct(a: np.ndarray, rows: Sequence[int], cols: Sequence[int]) -> np.ndarray:
    """Dense ``A[:, cols] A[rows, cols]^-1 A[rows, :]``, used for checks."""
    if len(rows) == 0:
        return np.zeros_like(a, dtype=float)
    lu = scipy.linalg.lu_factor(a[np.ix_(rows, cols)])
    return a[:, cols] @ scipy.linalg.lu_solve(lu, a[rows, :])


def _trim_condition(pivot: np.ndarray) -> int:
    """Largest leading size k whose k x k pivot block has condition <= MAX_PIVOT_CONDITION."""
    k = pivot.shape[0]
    while k > 1 and np.linalg.cond(pivot[:k, :k]) > MAX_PIVOT_CONDITION:
        k -= 1
    return k


class _Tci:
    """Two-site TCI state machine."""

    def __init__(self, oracle: Oracle, space: IndexSpace, opts: TciOptions, max_rank: int | None):
        self.space = space
        self.dims = space.dims
        self.n = len(space.dims)
        self.opts = opts
        self.max_rank = max_rank
        self.f = _CachedFunction(oracle, self.n)
        self.rng = np.random.default_rng(opts.seed)
        self.max_seen = 0.0
        pivot = self._initial_pivot()
        self.state = PivotState(
            I=[[pivot[:p]] for p in range(self.n)] + [[]],
            J=[[]] + [[pivot[p:]] for p in range(1, self.n + 1)],
        )

    def _random_index(self) -> MultiIndex:
        return tuple(int(self.rng.integers(d)) for d in self.dims)

    def _initial_pivot(self) -> MultiIndex:
        init = self.opts.initial_pivot
        if init is None:
            zero = (0,) * self.n
            if self.f([zero])[0] != 0.0:
                return zero
            for _ in range(1000):
                cand = self._random_index()
                if self.f([cand])[0] != 0.0:
                    return cand
            raise ValueError("could not find a nonzero initial pivot")
        if isinstance(init, str):
            if init != "random":
                raise ValueError(f"unknown initial pivot {init!r}")
            return self._random_index()
        init = tuple(int(i) for i in init)
        if len(init) != self.n or any(not 0 <= i < d for i, d in zip(init, self.dims)):
            raise ValueError(f"initial pivot {init} outside index space {self.dims}")
        return init

    def _block(self, rows: Sequence[MultiIndex], cols: Sequence[MultiIndex]) -> np.ndarray:
        keys = [r + c for r in rows for c in cols]
        vals = self.f(keys).reshape(len(rows), len(cols))
        if vals.size:
            self.max_seen = max(self.max_seen, float(np.max(np.abs(vals))))
        return vals

    def _update_bond(self, b: int) -> float:
        """Re-select the pivots of bond b+1 from the Pi matrix of sites (b, b+1)."""
        st = self.state
        rows = [i + (s,) for i in st.I[b] for s in range(self.dims[b])]
        cols = [(t,) + j for t in range(self.dims[b + 1]) for j in st.J[b + 2]]
        pi = self._block(rows, cols)
        scale = float(np.max(np.abs(pi)))
        sel_r, sel_c, err = _full_pivot_lu(pi, self.opts.tolerance, self.max_rank)
        if not sel_r:
            # identically zero Pi matrix: keep one pivot so the chain stays connected
            sel_r, sel_c, err = [0], [0], 0.0
        else:
            k = _trim_condition(pi[np.ix_(sel_r, sel_c)])
            if k < len(sel_r):
                logger.debug("bond %d: dropping %d ill-conditioned pivots", b + 1, len(sel_r) - k)
                sel_r, sel_c = sel_r[:k], sel_c[:k]
        st.I[b + 1] = [rows[r] for r in sel_r]
        st.J[b + 1] = [cols[c] for c in sel_c]
        return err / scale if scale > 0 else 0.0

    def _restore_rows(self) -> None:
        """Forward pass choosing row pivots only, making I nested while J (nested) is kept."""
        st = self.state
        for b in range(self.n - 1):
            rows = [i + (s,) for i in st.I[b] for s in range(self.dims[b])]
            a = self._block(rows, st.J[b + 1])
            sel_r, sel_c, _ = _full_pivot_lu(a, 0.0, len(st.J[b + 1]))
            if not sel_r:
                sel_r, sel_c = [0], [0]
            k = _trim_condition(a[np.ix_(sel_r, sel_c)])
            sel_r, sel_c = sel_r[:k], sel_c[:k]
            if len(sel_c) < len(st.J[b + 1]):
                logger.debug("bond %d: column set shrank while restoring nesting", b + 1)
            # keep column order so J[b+1] remains the old (nested) list where possible
            order = np.argsort(sel_c, kind="stable")
            st.I[b + 1] = [rows[sel_r[o]] for o in order]
            st.J[b + 1] = [st.J[b + 1][sel_c[o]] for o in order]

    def _restore_cols(self) -> None:
        """Backward pass choosing column pivots only, making J nested while I is kept."""
        st = self.state
        for b in range(self.n - 2, -1, -1):
            cols = [(t,) + j for t in range(self.dims[b + 1]) for j in st.J[b + 2]]
            a = self._block(st.I[b + 1], cols)
            sel_r, sel_c, _ = _full_pivot_lu(a, 0.0, len(st.I[b + 1]))
            if not sel_r:
                sel_r, sel_c = [0], [0]
            k = _trim_condition(a[np.ix_(sel_r, sel_c)])
            sel_r, sel_c = sel_r[:k], sel_c[:k]
            if len(sel_r) < len(st.I[b + 1]):
                logger.debug("bond %d: row set shrank while restoring nesting", b + 1)
            order = np.argsort(sel_r, kind="stable")
            st.J[b + 1] = [cols[sel_c[o]] for o in order]
            st.I[b + 1] = [st.I[b + 1][sel_r[o]] for o in order]

    def sweep(self, forward: bool) -> float:
        bonds = range(self.n - 1) if forward else range(self.n - 2, -1, -1)
        err = max((self._update_bond(b) for b in bonds), default=0.0)
        if forward:
            self._restore_cols()
        else:
            self._restore_rows()
        return err

    def build_tt(self) -> TensorTrain:
        st = self.state
        cores = []
        for s in range(self.n):
            rows = st.I[s]
            cols = [(t,) + j for t in range(self.dims[s]) for j in st.J[s + 1]]
            t_core = self._block(rows, cols).reshape(len(rows), self.dims[s], len(st.J[s + 1]))
            if s < self.n - 1:
                pivot = self._block(st.I[s + 1], st.J[s + 1])
                lu = scipy.linalg.lu_factor(pivot)
                r0, d, r1 = t_core.shape
                # X P = T  <=>  P^T X^T = T^T
                x = scipy.linalg.lu_solve(lu, t_core.reshape(r0 * d, r1).T, trans=1).T
                t_core = x.reshape(r0, d, r1)
            cores.append(t_core)
        return TensorTrain(cores)

    def global_search(self, tt: TensorTrain) -> int:
        """Evaluate random full indices and insert the worst offenders as pivots."""
        opts = self.opts
        if opts.n_global_search <= 0 or opts.max_global_insert <= 0:
            return 0
        cands = list(dict.fromkeys(self._random_index() for _ in range(opts.n_global_search)))
        exact = self.f(cands)
        approx = tt_eval_batch(tt, np.array(cands))
        scale = max(self.max_seen, float(np.max(np.abs(exact))), np.finfo(float).tiny)
        errs = np.abs(exact - approx) / scale
        order = np.argsort(-errs, kind="stable")
        inserted = 0
        for o in order[: opts.max_global_insert]:
            if errs[o] <= opts.tolerance:
                break
            x = cands[o]
            for p in range(1, self.n):
                if x[:p] not in self.state.I[p]:
                    self.state.I[p].append(x[:p])
                if x[p:] not in self.state.J[p]:
                    self.state.J[p].append(x[p:])
            inserted += 1
        return inserted


def tci_learn(
    oracle: Oracle,
    space: IndexSpace | Sequence[int],
    opts: TciOptions | None = None,
    mode: str = "adaptive",
    on_sweep: Callable[[int, TensorTrain, int], bool] | None = None,
    explore_saturated: bool = False,
) -> TciResult:
    """Learn a tensor train interpolating ``oracle`` over ``space``.

    ``mode`` is ``"adaptive"`` (ranks grow until the local error is below
    ``opts.tolerance``) or ``"fixed_rank"`` (ranks capped at ``opts.max_rank``).
    ``on_sweep(sweep, tt, n_queries)`` is called after every sweep; returning
    True stops the run early. In fixed-rank mode the random global search
    pauses once every bond is at its cap, unless ``explore_saturated`` is set
    (useful when the evaluated entries themselves matter, as in TTOpt).
    """
    if not isinstance(space, IndexSpace):
        space = IndexSpace(tuple(space))
    opts = opts or TciOptions()
    if mode not in ("adaptive", "fixed_rank"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "fixed_rank" and opts.max_rank is None:
        raise ValueError("fixed_rank mode needs opts.max_rank")

    if len(space) == 1:
        f = _CachedFunction(oracle, 1)
        keys = [(s,) for s in range(space.dims[0])]
        tt = TensorTrain([f(keys).reshape(1, -1, 1)])
        piv = PivotState(I=[[()], []], J=[[], [()]])
        return TciResult(tt, piv, len(f), True, 0.0, 1, [0.0], [tt.ranks], dict(f.values))

    tci = _Tci(oracle, space, opts, opts.max_rank)
    prev_ranks = tci.state.ranks
    seen_sets = set()
    # largest rank each bond can reach under the cap
    dims = space.dims
    caps = tuple(
        min(math.prod(dims[:p]), math.prod(dims[p:]), opts.max_rank or math.inf) for p in range(1, len(dims))
    )
    converged = False
    err = np.inf
    tt = None
    errors: list[float] = []
    rank_hist: list[tuple[int, ...]] = []
    sweep = 0
    for sweep in range(1, opts.max_sweeps + 1):
        err = tci.sweep(forward=(sweep % 2 == 1))
        tt = tci.build_tt()
        pivots = tci.state.copy()
        errors.append(err)
        rank_hist.append(tt.ranks)
        if on_sweep is not None and on_sweep(sweep, tt, len(tci.f)):
            break
        sets = (tuple(map(tuple, tci.state.I)), tuple(map(tuple, tci.state.J)))
        saturated = tt.ranks[1:-1] == caps
        # at a saturated cap new pivots would only be trimmed away again
        skip = mode == "fixed_rank" and saturated and not explore_saturated
        inserted = 0 if skip else tci.global_search(tt)
        ranks_same = tt.ranks == prev_ranks
        if inserted == 0 and ranks_same and err <= opts.tolerance:
            converged = True
            break
        # without insertions the sweeps are deterministic, so a repeated pivot state is a fixed point or cycle
        if inserted == 0 and mode == "fixed_rank" and sets in seen_sets:
            converged = True
            break
        prev_ranks = tt.ranks
        seen_sets.add(sets)
    logger.debug("tci: %d sweeps, ranks %s, %d queries", sweep, tt.ranks, len(tci.f))
    return TciResult(
        tt=tt,
        pivots=pivots,
        n_queries=len(tci.f),
        converged=converged,
        max_local_error=float(err),
        n_sweeps=sweep,
        error_history=errors,
        rank_history=rank_hist,
        evaluations=dict(tci.f.values),
    )


def ttopt_search(oracle: Oracle, space: IndexSpace | Sequence[int], rank_cap: int, opts: TciOptions | None = None):
    """Fixed-rank TCI run; returns ``(argmax, value, result)`` over every evaluated entry."""
    if rank_cap < 1:
        raise ValueError("rank_cap must be >= 1")
    base = opts or TciOptions(max_sweeps=6)
    run_opts = TciOptions(
        tolerance=base.tolerance,
        max_rank=rank_cap,
        max_sweeps=base.max_sweeps,
        n_global_search=base.n_global_search,
        max_global_insert=base.max_global_insert,
        seed=base.seed,
        initial_pivot=base.initial_pivot,
    )
    result = tci_learn(oracle, space, run_opts, mode="fixed_rank", explore_saturated=True)
    best = min(result.evaluations.items(), key=lambda kv: (-abs(kv[1]), kv[0]))
    return best[0], best[1], result


def ttopt_max(oracle: Oracle, space: IndexSpace | Sequence[int], rank_cap: int = 2, opts: TciOptions | None = None):
    """Approximate maximum-modulus element of a black-box tensor.

    Returns ``(argmax, value)``; the value is re-queried from the oracle.
    """
    argmax, _, _ = ttopt_search(oracle, space, rank_cap, opts)
    value = float(np.asarray(oracle(np.array([argmax], dtype=np.int64)))[0])
    return argmax, value
