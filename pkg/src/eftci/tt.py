"""Tensor-train container and exact linear algebra on chains of real 3-index cores.

Index convention is big-endian: the first site varies slowest when a tensor
train is flattened to a dense vector.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

TT_FORMAT_VERSION = 1
# singular values below this fraction of the largest are treated as exact zeros
SV_CUTOFF = 1e-14


class TensorTrain:
    """A chain of dense cores ``cores[l]`` of shape ``(r_{l-1}, d_l, r_l)``.

    Cores are stored as read-only float64 arrays, so a TensorTrain can be
    shared between threads.
    """

    def __init__(self, cores: Sequence[np.ndarray]):
        if len(cores) == 0:
            raise ValueError("a tensor train needs at least one core")
        checked = []
        for pos, core in enumerate(cores):
            core = np.array(core, dtype=float)
            if core.ndim != 3:
                raise ValueError(f"core {pos} has ndim {core.ndim}, expected 3")
            if not np.all(np.isfinite(core)):
                raise ValueError(f"core {pos} has non-finite entries")
            core.setflags(write=False)
            checked.append(core)
        if checked[0].shape[0] != 1 or checked[-1].shape[2] != 1:
            raise ValueError("boundary ranks must be 1")
        for pos in range(len(checked) - 1):
            if checked[pos].shape[2] != checked[pos + 1].shape[0]:
                raise ValueError(
                    f"rank mismatch between core {pos} ({checked[pos].shape[2]}) "
                    f"and core {pos + 1} ({checked[pos + 1].shape[0]})"
                )
        self.cores = tuple(checked)

    @property
    def n_sites(self) -> int:
        return len(self.cores)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        """Bond ranks including the two boundary ones: ``(1, r_1, ..., r_{N-1}, 1)``."""
        return (1,) + tuple(c.shape[2] for c in self.cores)

    @property
    def max_rank(self) -> int:
        return max(self.ranks)

    def scaled(self, factor: float) -> "TensorTrain":
        cores = list(self.cores)
        cores[0] = cores[0] * factor
        return TensorTrain(cores)

    def __repr__(self) -> str:
        return f"TensorTrain(dims={self.dims}, ranks={self.ranks})"


def _check_index(tt: TensorTrain, idx) -> tuple[int, ...]:
    idx = tuple(int(i) for i in idx)
    if len(idx) != tt.n_sites:
        raise IndexError(f"index has {len(idx)} components, tensor train has {tt.n_sites} sites")
    for pos, (i, d) in enumerate(zip(idx, tt.dims)):
        if not 0 <= i < d:
            raise IndexError(f"index component {i} at position {pos} out of range [0, {d})")
    return idx


def tt_eval(tt: TensorTrain, idx) -> float:
    """Value of the tensor train at one multi-index."""
    idx = _check_index(tt, idx)
    vec = np.ones(1)
    for core, i in zip(tt.cores, idx):
        vec = vec @ core[:, i, :]
    return float(vec[0])


def tt_eval_batch(tt: TensorTrain, indices) -> np.ndarray:
    """Values at many multi-indices, ``indices`` of shape ``(n, N)``."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.ndim != 2 or indices.shape[1] != tt.n_sites:
        raise IndexError(f"expected indices of shape (n, {tt.n_sites}), got {indices.shape}")
    if indices.shape[0] and (np.any(indices < 0) or np.any(indices >= np.array(tt.dims))):
        bad = np.argwhere((indices < 0) | (indices >= np.array(tt.dims)))[0]
        raise IndexError(f"index component out of range at row {bad[0]}, position {bad[1]}")
    vecs = np.ones((indices.shape[0], 1))
    for pos, core in enumerate(tt.cores):
        # (n, r) x (n, r, r') -> (n, r')
        vecs = np.einsum("na,nab->nb", vecs, core[:, indices[:, pos], :].transpose(1, 0, 2))
    return vecs[:, 0]


def tt_full(tt: TensorTrain) -> np.ndarray:
    """Dense big-endian vector of all entries. Only for small index spaces."""
    mat = np.ones((1, 1))
    for core in tt.cores:
        r0, d, r1 = core.shape
        mat = (mat @ core.reshape(r0, d * r1)).reshape(-1, r1)
    return mat[:, 0]


def tt_inner(a: TensorTrain, b: TensorTrain) -> float:
    """Sum over all multi-indices of ``a(idx) * b(idx)`` by transfer contraction."""
    if a.dims != b.dims:
        raise ValueError(f"dims mismatch: {a.dims} vs {b.dims}")
    env = np.ones((1, 1))
    for ca, cb in zip(a.cores, b.cores):
        env = np.einsum("ab,asc->bsc", env, ca)
        env = np.einsum("bsc,bsd->cd", env, cb)
    return float(env[0, 0])


def tt_norm(tt: TensorTrain) -> float:
    return float(np.sqrt(max(tt_inner(tt, tt), 0.0)))


def _truncation_rank(s: np.ndarray, tol: float, max_rank: int | None) -> int:
    if s.size == 0 or s[0] == 0.0:
        return 1
    keep = int(np.sum(s > SV_CUTOFF * s[0]))
    if tol > 0:
        # tail[r] = sum of s_i^2 for i >= r
        tail = np.concatenate([np.cumsum((s**2)[::-1])[::-1], [0.0]])
        allowed = tol**2 * tail[0]
        keep = min(keep, int(np.argmax(tail <= allowed)))
    if max_rank is not None:
        keep = min(keep, max_rank)
    return max(keep, 1)


def _left_orthogonalize(cores: list[np.ndarray], stop: int) -> None:
    """QR sweep on cores[0:stop], pushing the R factors into cores[stop] in place."""
    for pos in range(stop):
        r0, d, r1 = cores[pos].shape
        q, r = np.linalg.qr(cores[pos].reshape(r0 * d, r1))
        cores[pos] = q.reshape(r0, d, q.shape[1])
        cores[pos + 1] = np.einsum("ab,bsc->asc", r, cores[pos + 1])


def _right_orthogonalize(cores: list[np.ndarray], stop: int) -> None:
    """LQ sweep on cores[stop+1:], pushing the L factors into cores[stop] in place."""
    for pos in range(len(cores) - 1, stop, -1):
        r0, d, r1 = cores[pos].shape
        q, r = np.linalg.qr(cores[pos].reshape(r0, d * r1).T)
        cores[pos] = q.T.reshape(q.shape[1], d, r1)
        cores[pos - 1] = np.einsum("asb,cb->asc", cores[pos - 1], r)


def tt_compress_svd(tt: TensorTrain, tol: float = 0.0, max_rank: int | None = None) -> TensorTrain:
    """Left-to-right orthogonalization, then right-to-left truncated SVDs.

    At each bond the trailing singular values whose cumulative squared weight is
    at most ``tol**2`` of the total are discarded, so the relative 2-norm error
    is bounded by ``tol * sqrt(N)``.
    """
    if tol < 0:
        raise ValueError("tol must be >= 0")
    if max_rank is not None and max_rank < 1:
        raise ValueError("max_rank must be >= 1")
    cores = [c.copy() for c in tt.cores]
    n = len(cores)
    _left_orthogonalize(cores, n - 1)
    for pos in range(n - 1, 0, -1):
        r0, d, r1 = cores[pos].shape
        u, s, vt = np.linalg.svd(cores[pos].reshape(r0, d * r1), full_matrices=False)
        keep = _truncation_rank(s, tol, max_rank)
        cores[pos] = vt[:keep].reshape(keep, d, r1)
        cores[pos - 1] = np.einsum("asb,bc->asc", cores[pos - 1], u[:, :keep] * s[:keep])
    return TensorTrain(cores)


def tt_from_dense(values, dims: Sequence[int], tol: float = 0.0, max_rank: int | None = None) -> TensorTrain:
    """Tensor train of a dense big-endian vector by a left-to-right SVD sweep."""
    values = np.asarray(values, dtype=float).ravel()
    dims = tuple(int(d) for d in dims)
    if values.size != int(np.prod(dims)):
        raise ValueError(f"values has length {values.size}, expected {int(np.prod(dims))}")
    cores = []
    rest = values.reshape(1, -1)
    rank = 1
    for d in dims[:-1]:
        mat = rest.reshape(rank * d, -1)
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
        keep = _truncation_rank(s, tol, max_rank)
        cores.append(u[:, :keep].reshape(rank, d, keep))
        rest = s[:keep, None] * vt[:keep]
        rank = keep
    cores.append(rest.reshape(rank, dims[-1], 1))
    return TensorTrain(cores)


def tt_halfcut_spectrum(tt: TensorTrain) -> np.ndarray:
    """Schmidt values of the normalized tensor train across bond ``N // 2``.

    Returned in descending order with ``sum(values**2) == 1``; values below
    ``1e-14`` of the largest are reported as 0.
    """
    n = tt.n_sites
    if n < 2:
        raise ValueError("half-cut spectrum needs at least 2 sites")
    cut = n // 2
    cores = [c.copy() for c in tt.cores]
    _left_orthogonalize(cores, cut)
    _right_orthogonalize(cores, cut)
    # sites before cut are left-isometric and sites after it right-isometric,
    # so the Schmidt values across bond `cut` are those of the centre core
    r0, d, r1 = cores[cut].shape
    s = np.linalg.svd(cores[cut].reshape(r0, d * r1), compute_uv=False)
    norm = np.sqrt(np.sum(s**2))
    if norm == 0.0:
        raise ValueError("zero-norm tensor train has no spectrum")
    s = np.sort(s / norm)[::-1]
    s[s < SV_CUTOFF * s[0]] = 0.0
    return s


def tt_to_json(tt: TensorTrain) -> str:
    """Versioned JSON text; floats written with 17 significant digits."""
    parts = []
    for core in tt.cores:
        data = ",".join(format(float(x), ".17g") for x in core.ravel())
        parts.append('{"shape":[%d,%d,%d],"data":[%s]}' % (*core.shape, data))
    dims = ",".join(str(d) for d in tt.dims)
    return '{"version":%d,"dims":[%s],"cores":[%s]}' % (TT_FORMAT_VERSION, dims, ",".join(parts))


def tt_from_json(text: str) -> TensorTrain:
    obj = json.loads(text)
    if obj.get("version") != TT_FORMAT_VERSION:
        raise ValueError(f"unsupported tensor-train file version {obj.get('version')!r}")
    cores = [np.array(c["data"], dtype=float).reshape(c["shape"]) for c in obj["cores"]]
    tt = TensorTrain(cores)
    if list(tt.dims) != list(obj["dims"]):
        raise ValueError("dims field disagrees with core shapes")
    return tt


def save_tt(tt: TensorTrain, path) -> None:
    Path(path).write_text(tt_to_json(tt))


def load_tt(path) -> TensorTrain:
    return tt_from_json(Path(path).read_text())
