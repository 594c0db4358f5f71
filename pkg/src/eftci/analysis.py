"""Learning drivers and analyses built on learned entanglement features."""
from __future__ import annotations

import csv
import io
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cross import PivotState, TciOptions, tci_learn
from .oracles import (
    OracleStats,
    PurityBackend,
    dual_oracle,
    dual_to_natural_masks,
    mps_ef_build,
    natural_oracle,
)
from .seeds import substream
from .states import ModelSpec, gen_random_mps, make_backend
from .tt import TensorTrain, tt_full, tt_halfcut_spectrum, tt_inner

logger = logging.getLogger(__name__)

MAX_ENUMERATION_SITES = 14
# error thresholds 1.1^-k used by the scans
SCAN_EXPONENTS = (40, 50, 52, 54, 56, 58, 60, 70, 80)
SCAN_THRESHOLDS = tuple(1.1 ** (-k) for k in SCAN_EXPONENTS)
SCAN_COLUMNS = ("family", "L", "state_seed", "run_seed", "eps_th", "mean_chi", "std_chi", "mean_queries", "status")


@dataclass
class EFRecord:
    tt: TensorTrain
    basis: str
    L: int
    state_meta: dict = field(default_factory=dict)
    stats: OracleStats = field(default_factory=OracleStats)
    options: TciOptions = field(default_factory=TciOptions)
    eps_th: float | None = None
    converged: bool = False
    eps: float | None = None
    stop_reason: str = ""
    pivots: PivotState | None = None
    n_sweeps: int = 0
    max_local_error: float = float("nan")

    def __post_init__(self):
        if self.basis not in ("natural", "dual"):
            raise ValueError(f"unknown basis {self.basis!r}")
        n = self.L if self.basis == "natural" else self.L - 1
        if self.tt.dims != (2,) * n:
            raise ValueError(f"tensor train dims {self.tt.dims} do not fit basis {self.basis} at L={self.L}")

    @property
    def ranks(self) -> tuple[int, ...]:
        return self.tt.ranks

    @property
    def max_chi(self) -> int:
        return self.tt.max_rank

    @property
    def mean_chi(self) -> float:
        return mean_bond_rank(self.tt)

    def sidecar(self) -> dict:
        return {
            "basis": self.basis,
            "L": self.L,
            "ranks": list(self.ranks),
            "max_chi": self.max_chi,
            "mean_chi": self.mean_chi,
            "n_queries": self.stats.distinct_queries,
            "total_queries": self.stats.total_queries,
            "converged": self.converged,
            "stop_reason": self.stop_reason,
            "n_sweeps": self.n_sweeps,
            "max_local_error": self.max_local_error,
            "eps_th": self.eps_th,
            "eps": self.eps,
            "seed": self.options.seed,
            "state": self.state_meta,
        }


def mean_bond_rank(tt: TensorTrain) -> float:
    inner = tt.ranks[1:-1]
    return float(np.mean(inner)) if inner else 1.0


def chi_max_reference(L: int) -> float:
    """Largest possible average bond dimension of a dual-basis feature on L sites."""
    bonds = [min(2**l, 2 ** (L - 1 - l)) for l in range(1, L - 1)]
    return float(np.mean(bonds)) if bonds else 1.0


def dual_masks(L: int) -> np.ndarray:
    """Natural masks of all 2^(L-1) dual entries, in dual big-endian order."""
    duals = np.array(list(itertools.product((0, 1), repeat=L - 1)), dtype=np.int64).reshape(-1, L - 1)
    return dual_to_natural_masks(duals)


def _dual_values(tt: TensorTrain, basis: str, L: int) -> np.ndarray:
    """All dual entries of a learned feature, in dual big-endian order."""
    full = tt_full(tt)
    if basis == "dual":
        return full
    weights = 2 ** np.arange(L - 1, -1, -1, dtype=np.int64)
    return full[dual_masks(L) @ weights]


def _check_enumerable(L: int) -> None:
    if L > MAX_ENUMERATION_SITES:
        raise ValueError(f"full enumeration needs L <= {MAX_ENUMERATION_SITES}, got {L}")


def reference_values(backend: PurityBackend) -> np.ndarray:
    """Exact purities at all dual entries."""
    _check_enumerable(backend.L)
    return backend.purities(dual_masks(backend.L))


def global_relative_error(tt: TensorTrain, backend: PurityBackend, basis: str = "dual", exact=None) -> float:
    """Mean relative deviation over the 2^(L-1) dual entries.

    ``exact`` may carry precomputed ``reference_values(backend)``.
    """
    L = backend.L
    _check_enumerable(L)
    exact = reference_values(backend) if exact is None else exact
    approx = _dual_values(tt, basis, L)
    return float(np.mean(np.abs(approx - exact) / exact))


def _make_oracle(backend: PurityBackend, basis: str, stats: OracleStats):
    if basis == "natural":
        return natural_oracle(backend, stats)
    if basis == "dual":
        return dual_oracle(backend, stats)
    raise ValueError(f"unknown basis {basis!r}")


def learn_ef(
    backend: PurityBackend,
    basis: str = "dual",
    opts: TciOptions | None = None,
    eps_th: float | None = None,
    mode: str = "adaptive",
    state_meta: dict | None = None,
    exact=None,
) -> EFRecord:
    """Learn the entanglement feature of ``backend`` with TCI.

    With ``eps_th`` set, the global relative error is evaluated by full
    enumeration after every sweep and the run stops once it is <= eps_th.
    """
    opts = opts or TciOptions()
    stats = OracleStats()
    oracle = _make_oracle(backend, basis, stats)
    L = backend.L
    hit = {}
    on_sweep = None
    if eps_th is not None:
        exact = reference_values(backend) if exact is None else exact

        def on_sweep(sweep, tt, n_queries):
            eps = float(np.mean(np.abs(_dual_values(tt, basis, L) - exact) / exact))
            hit["eps"] = eps
            return eps <= eps_th

    res = tci_learn(oracle, oracle.space, opts, mode=mode, on_sweep=on_sweep)
    if eps_th is not None and hit["eps"] <= eps_th:
        reason = "eps_th"
    elif res.converged:
        reason = "converged"
    else:
        reason = "max_sweeps"
    return EFRecord(
        tt=res.tt,
        basis=basis,
        L=L,
        state_meta=state_meta or {},
        stats=stats,
        options=opts,
        eps_th=eps_th,
        converged=res.converged or reason == "eps_th",
        eps=hit.get("eps"),
        stop_reason=reason,
        pivots=res.pivots,
        n_sweeps=res.n_sweeps,
        max_local_error=res.max_local_error,
    )


# --------------------------------------------------------------------------
# distances and maps


def ef_distance(a: EFRecord, b: EFRecord) -> float:
    """l2 distance between two learned features, by tensor-train inner products."""
    if a.basis != b.basis or a.L != b.L:
        raise ValueError(f"cannot compare {a.basis}/L={a.L} with {b.basis}/L={b.L}")
    sq = tt_inner(a.tt, a.tt) - 2 * tt_inner(a.tt, b.tt) + tt_inner(b.tt, b.tt)
    if sq < 0:
        if sq < -1e-10:
            raise ValueError(f"negative squared distance {sq}")
        sq = 0.0
    return float(np.sqrt(sq))


def distance_matrix(records: Sequence[EFRecord]) -> np.ndarray:
    n = len(records)
    dist = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            dist[i, j] = dist[j, i] = ef_distance(records[i], records[j])
    return dist


MAX_LAYOUT_WEIGHT = 1e8


def layout_weights(dist: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        w = np.where(dist > 0, 1.0 / np.maximum(dist, 1e-300) ** 2, MAX_LAYOUT_WEIGHT)
    w = np.minimum(w, MAX_LAYOUT_WEIGHT)
    np.fill_diagonal(w, 0.0)
    return w


def layout_stress(x: np.ndarray, dist: np.ndarray, weights: np.ndarray | None = None) -> float:
    weights = layout_weights(dist) if weights is None else weights
    emb = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=-1)
    iu = np.triu_indices(len(x), 1)
    return float(np.sum(weights[iu] * (emb[iu] - dist[iu]) ** 2))


def stress_layout(
    dist,
    pinned: dict[int, Sequence[float]] | None = None,
    iters: int = 500,
    seed: int = 0,
    tol: float = 1e-12,
) -> tuple[np.ndarray, list[float]]:
    """Weighted stress majorization in 2D with some points held fixed.

    Minimizes sum_{i<j} w_ij (|x_i - x_j| - D_ij)^2 with w_ij = D_ij^-2.
    Returns the coordinates and the stress after every iteration (the first
    entry is the initial stress).
    """
    dist = np.asarray(dist, dtype=float)
    n = dist.shape[0]
    if dist.shape != (n, n) or np.max(np.abs(dist - dist.T), initial=0.0) > 1e-12:
        raise ValueError("distance matrix must be square and symmetric")
    if np.any(np.abs(np.diag(dist)) > 1e-12):
        raise ValueError("distance matrix must have a zero diagonal")
    pinned = dict(pinned or {})
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 2)) * (np.max(dist) if n > 1 and np.max(dist) > 0 else 1.0)
    for i, xy in pinned.items():
        x[i] = xy
    free = np.array([i for i in range(n) if i not in pinned], dtype=int)
    fixed = np.array(sorted(pinned), dtype=int)
    w = layout_weights(dist)
    v = np.diag(w.sum(axis=1)) - w
    history = [layout_stress(x, dist, w)]
    if free.size == 0 or n < 2:
        return x, history
    v_ff = v[np.ix_(free, free)]
    # without pins V is singular; its pseudo-inverse gives the centred update
    v_ff_inv = np.linalg.pinv(v_ff) if fixed.size == 0 else np.linalg.inv(v_ff)
    for _ in range(iters):
        emb = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            b = np.where(emb > 0, -w * dist / emb, 0.0)
        np.fill_diagonal(b, 0.0)
        np.fill_diagonal(b, -b.sum(axis=1))
        rhs = (b @ x)[free]
        if fixed.size:
            rhs = rhs - v[np.ix_(free, fixed)] @ x[fixed]
        x = x.copy()
        x[free] = v_ff_inv @ rhs
        history.append(layout_stress(x, dist, w))
        if history[-2] - history[-1] <= tol * max(history[-2], 1e-300):
            break
    return x, history


# --------------------------------------------------------------------------
# bond-dimension scans


@dataclass
class ScanRow:
    family: str
    L: int
    state_seed: int
    run_seed: int
    eps_th: float
    mean_chi: float
    std_chi: float
    mean_queries: float
    status: str = "ok"
    mean_max_chi: float = float("nan")

    def csv_fields(self) -> list[str]:
        return [
            self.family,
            str(self.L),
            str(self.state_seed),
            str(self.run_seed),
            format(self.eps_th, ".17g"),
            format(self.mean_chi, ".17g"),
            format(self.std_chi, ".17g"),
            format(self.mean_queries, ".17g"),
            self.status,
        ]


def threshold_run(
    backend: PurityBackend,
    thresholds: Sequence[float],
    opts: TciOptions,
    basis: str = "dual",
    exact=None,
) -> list[dict]:
    """One TCI run that records the bond ranks when each threshold is first met.

    Returns one dict per threshold with keys ``mean_chi``, ``max_chi``,
    ``queries``, ``eps``, ``reached``.
    """
    L = backend.L
    exact = reference_values(backend) if exact is None else exact
    order = sorted(range(len(thresholds)), key=lambda i: -thresholds[i])
    out: list[dict | None] = [None] * len(thresholds)
    last = {}

    def on_sweep(sweep, tt, n_queries):
        eps = float(np.mean(np.abs(_dual_values(tt, basis, L) - exact) / exact))
        last.update(tt=tt, queries=n_queries, eps=eps)
        for i in order:
            if out[i] is None and eps <= thresholds[i]:
                out[i] = dict(mean_chi=mean_bond_rank(tt), max_chi=tt.max_rank, queries=n_queries, eps=eps, reached=True)
        return all(o is not None for o in out)

    stats = OracleStats()
    oracle = _make_oracle(backend, basis, stats)
    tci_learn(oracle, oracle.space, opts, on_sweep=on_sweep)
    for i in range(len(out)):
        if out[i] is None:
            tt = last["tt"]
            out[i] = dict(mean_chi=mean_bond_rank(tt), max_chi=tt.max_rank, queries=last["queries"], eps=last["eps"], reached=False)
    return out


def _scan_job(spec: ModelSpec, state_seed: int, thresholds, n_tci_runs: int, root_seed: int, base_opts: TciOptions):
    rows = []
    runs = []
    try:
        backend, meta = make_backend(spec, state_seed)
        exact = reference_values(backend)
        per_run = []
        for run in range(n_tci_runs):
            opts = TciOptions(
                tolerance=base_opts.tolerance,
                max_rank=base_opts.max_rank,
                max_sweeps=base_opts.max_sweeps,
                n_global_search=base_opts.n_global_search,
                max_global_insert=base_opts.max_global_insert,
                seed=substream(root_seed, "tci", spec.L, state_seed, run),
                initial_pivot="random",
            )
            res = threshold_run(backend, thresholds, opts, exact=exact)
            per_run.append(res)
            runs.append({"family": spec.name(), "L": spec.L, "state_seed": state_seed, "run": run, "tci_seed": opts.seed, "thresholds": res})
        for i, eps_th in enumerate(thresholds):
            chis = np.array([r[i]["mean_chi"] for r in per_run])
            maxes = np.array([r[i]["max_chi"] for r in per_run])
            queries = np.array([r[i]["queries"] for r in per_run])
            reached = all(r[i]["reached"] for r in per_run)
            rows.append(
                ScanRow(spec.name(), spec.L, state_seed, root_seed, eps_th, float(chis.mean()), float(chis.std()),
                        float(queries.mean()), "ok" if reached else "not_reached", float(maxes.mean()))
            )
    except Exception as exc:  # a failed job must not abort the whole scan
        logger.error("scan job %s L=%d seed=%d failed: %s", spec.name(), spec.L, state_seed, exc)
        for eps_th in thresholds:
            rows.append(ScanRow(spec.name(), spec.L, state_seed, root_seed, eps_th, float("nan"), float("nan"),
                                float("nan"), f"error:{type(exc).__name__}"))
    return rows, runs


def bond_scan(
    specs: Sequence[ModelSpec],
    thresholds: Sequence[float] = SCAN_THRESHOLDS,
    n_state_samples: int = 1,
    n_tci_runs: int = 10,
    seed: int = 0,
    opts: TciOptions | None = None,
    threads: int = 1,
) -> tuple[list[ScanRow], list[dict]]:
    """Bond dimension at each error threshold, averaged over TCI runs.

    Each (spec, state sample) is one job. Returns the rows sorted by
    (family, L, state_seed, eps_th descending) and the per-run details.
    """
    base = opts or TciOptions()
    jobs = []
    for spec in specs:
        n_states = n_state_samples if spec.is_random else 1
        for s in range(n_states):
            state_seed = substream(seed, "state", spec.L, s) if spec.is_random else 0
            jobs.append((spec, state_seed))

    def run(job):
        return _scan_job(job[0], job[1], thresholds, n_tci_runs, seed, base)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    rows = [r for res in results for r in res[0]]
    details = [d for res in results for d in res[1]]
    rows.sort(key=lambda r: (r.family, r.L, r.state_seed, -r.eps_th))
    return rows, details


def scan_csv(rows: Sequence[ScanRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SCAN_COLUMNS)
    for row in rows:
        writer.writerow(row.csv_fields())
    return buf.getvalue()


# --------------------------------------------------------------------------
# spectrum of the feature of random MPS


def ef_spectrum_study(phis: Sequence[int], L: int, n_samples: int = 10, seed: int = 0, n_values: int = 8) -> list[dict]:
    """Averaged half-cut spectrum of the directly built feature of random MPS.

    For each bond dimension phi, squared Schmidt values are averaged over
    samples; rows hold ``phi``, ``lambdas`` (square roots of the averages) and
    ``ratio`` = lambda_3^2 / lambda_2^2.
    """
    rows = []
    for phi in phis:
        acc = np.zeros(n_values)
        for s in range(n_samples):
            mps = gen_random_mps(L, phi, substream(seed, "state", phi, s))
            lam = tt_halfcut_spectrum(mps_ef_build(mps))[:n_values]
            acc[: lam.size] += lam**2
        acc /= n_samples
        ratio = acc[2] / acc[1] if acc[1] > 0 else 0.0
        rows.append({"phi": int(phi), "lambdas": np.sqrt(acc).tolist(), "ratio": float(ratio)})
    return rows


def loglog_slope(x, y) -> float:
    """Least-squares slope of log(y) against log(x)."""
    return float(np.polyfit(np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float)), 1)[0])
