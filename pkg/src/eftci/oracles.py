"""Purity backends and the index-space adapters that turn them into TCI oracles.

A backend exposes ``L`` and ``purities(masks)`` where ``masks`` is a 0/1 array
of shape ``(n, L)`` (bit i set means site i belongs to region A). Every backend
returns exactly 1 for the empty and the full region.
"""
from __future__ import annotations

import itertools
import json
import math
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .cross import IndexSpace
from .tt import TT_FORMAT_VERSION, TensorTrain

DENSE_MAGIC = b"EFDS"


# --------------------------------------------------------------------------
# partitions and basis maps


@dataclass(frozen=True)
class Partition:
    mask: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "mask", tuple(int(bool(b)) for b in self.mask))

    @property
    def L(self) -> int:
        return len(self.mask)

    @classmethod
    def from_string(cls, bits: str) -> "Partition":
        if set(bits) - {"0", "1"}:
            raise ValueError(f"mask string may only hold 0 and 1, got {bits!r}")
        return cls(tuple(int(c) for c in bits))

    @classmethod
    def from_sites(cls, sites, L: int) -> "Partition":
        mask = [0] * L
        for s in sites:
            mask[s] = 1
        return cls(tuple(mask))

    def sites(self) -> tuple[int, ...]:
        return tuple(i for i, b in enumerate(self.mask) if b)

    def complement(self) -> "Partition":
        return Partition(tuple(1 - b for b in self.mask))

    def canonical(self) -> "Partition":
        """The member of {A, A^c} that contains the first site."""
        return self if self.mask[0] == 1 else self.complement()

    def __str__(self) -> str:
        return "".join(map(str, self.mask))


def dual_to_natural(dual: Sequence[int]) -> Partition:
    """Domain-wall bits of length L-1 to the region mask with the first site in A."""
    return Partition(tuple(dual_to_natural_masks(np.asarray([dual], dtype=np.int64))[0]))


def natural_to_dual(p: Partition | Sequence[int]) -> tuple[int, ...]:
    mask = p.mask if isinstance(p, Partition) else tuple(p)
    return tuple(natural_to_dual_masks(np.asarray([mask], dtype=np.int64))[0])


def dual_to_natural_masks(duals: np.ndarray) -> np.ndarray:
    duals = np.asarray(duals, dtype=np.int64)
    n = duals.shape[0]
    walls = np.cumsum(duals, axis=1) % 2
    return np.concatenate([np.ones((n, 1), dtype=np.int64), 1 - walls], axis=1)


def natural_to_dual_masks(masks: np.ndarray) -> np.ndarray:
    masks = np.asarray(masks, dtype=np.int64)
    # the XOR of neighbours is unchanged by complementing, so no explicit canonicalization
    return masks[:, 1:] ^ masks[:, :-1]


def fixed_size_decode(idx: Sequence[int], pool: Sequence[int]) -> tuple[int, ...]:
    """Sites selected by a fixed-subsystem-size index.

    ``idx`` is 1-based: component j picks the ``idx[j]``-th element of what is
    left of ``pool`` after the previous picks. Returns the picked sites in
    selection order.
    """
    remaining = list(pool)
    picked = []
    for j, i in enumerate(idx):
        i = int(i)
        if not 1 <= i <= len(remaining):
            raise IndexError(f"component {j} = {i} outside [1, {len(remaining)}]")
        picked.append(remaining.pop(i - 1))
    return tuple(picked)


def fixed_size_encode(sites, pool: Sequence[int]) -> tuple[int, ...]:
    """Canonical 1-based index of a site set: sites taken in pool order."""
    remaining = list(pool)
    chosen = set(sites)
    idx = []
    for s in [p for p in pool if p in chosen]:
        pos = remaining.index(s)
        idx.append(pos + 1)
        remaining.pop(pos)
    return tuple(idx)


# --------------------------------------------------------------------------
# states


@dataclass
class DenseState:
    dims: tuple[int, ...]
    amps: np.ndarray

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.amps = np.asarray(self.amps, dtype=complex).ravel()
        if self.amps.size != math.prod(self.dims):
            raise ValueError(f"{self.amps.size} amplitudes do not match dims {self.dims}")
        if not np.all(np.isfinite(self.amps)):
            raise ValueError("amplitudes must be finite")

    @property
    def L(self) -> int:
        return len(self.dims)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))


@dataclass
class FermionState:
    """Amplitudes over occupations ``(c_1^+)^{i_1} ... (c_L^+)^{i_L} |0>``, mode 1 slowest."""

    n_modes: int
    amps: np.ndarray

    def __post_init__(self):
        self.amps = np.asarray(self.amps, dtype=complex).ravel()
        if self.amps.size != 2**self.n_modes:
            raise ValueError(f"{self.amps.size} amplitudes do not match {self.n_modes} modes")

    @property
    def L(self) -> int:
        return self.n_modes


@dataclass
class MPS:
    """Complex matrix product state, cores of shape ``(phi_l, d, phi_r)``."""

    cores: list[np.ndarray]

    def __post_init__(self):
        self.cores = [np.asarray(c, dtype=complex) for c in self.cores]
        if self.cores[0].shape[0] != 1 or self.cores[-1].shape[2] != 1:
            raise ValueError("boundary bond dimensions must be 1")
        for pos in range(len(self.cores) - 1):
            if self.cores[pos].shape[2] != self.cores[pos + 1].shape[0]:
                raise ValueError(f"bond mismatch after core {pos}")

    @property
    def L(self) -> int:
        return len(self.cores)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def bond_dim(self) -> int:
        return max(c.shape[2] for c in self.cores)


def mps_to_dense(mps: MPS) -> DenseState:
    vec = np.ones((1, 1), dtype=complex)
    for core in mps.cores:
        r0, d, r1 = core.shape
        vec = (vec @ core.reshape(r0, d * r1)).reshape(-1, r1)
    return DenseState(mps.dims, vec[:, 0])


def permute_dense(state: DenseState, perm: Sequence[int]) -> DenseState:
    perm = list(perm)
    if sorted(perm) != list(range(state.L)):
        raise ValueError(f"{perm} is not a permutation of {state.L} sites")
    psi = state.amps.reshape(state.dims).transpose(perm)
    return DenseState(tuple(state.dims[p] for p in perm), psi.ravel())


def save_dense_state(state: DenseState, path) -> None:
    """Binary layout: magic, uint32 L, L x uint32 dims, then little-endian re/im doubles."""
    header = DENSE_MAGIC + struct.pack("<I", state.L) + struct.pack(f"<{state.L}I", *state.dims)
    body = np.ascontiguousarray(state.amps, dtype="<c16").tobytes()
    Path(path).write_bytes(header + body)


def load_dense_state(path) -> DenseState:
    raw = Path(path).read_bytes()
    if raw[:4] != DENSE_MAGIC:
        raise ValueError(f"{path}: not a dense state file")
    (L,) = struct.unpack_from("<I", raw, 4)
    dims = struct.unpack_from(f"<{L}I", raw, 8)
    amps = np.frombuffer(raw, dtype="<c16", offset=8 + 4 * L)
    return DenseState(dims, amps.copy())


def mps_to_json(mps: MPS) -> str:
    """Tensor-train JSON with an extra ``imag`` array per core."""
    parts = []
    for core in mps.cores:
        re = ",".join(format(float(x), ".17g") for x in core.real.ravel())
        im = ",".join(format(float(x), ".17g") for x in core.imag.ravel())
        parts.append('{"shape":[%d,%d,%d],"data":[%s],"imag":[%s]}' % (*core.shape, re, im))
    dims = ",".join(str(d) for d in mps.dims)
    return '{"version":%d,"dims":[%s],"cores":[%s]}' % (TT_FORMAT_VERSION, dims, ",".join(parts))


def mps_from_json(text: str) -> MPS:
    obj = json.loads(text)
    if obj.get("version") != TT_FORMAT_VERSION:
        raise ValueError(f"unsupported tensor-train file version {obj.get('version')!r}")
    cores = []
    for c in obj["cores"]:
        core = np.array(c["data"], dtype=float)
        if "imag" in c:
            core = core + 1j * np.array(c["imag"], dtype=float)
        cores.append(core.reshape(c["shape"]))
    return MPS(cores)


def save_mps(mps: MPS, path) -> None:
    Path(path).write_text(mps_to_json(mps))


def load_mps(path) -> MPS:
    return mps_from_json(Path(path).read_text())


# --------------------------------------------------------------------------
# purity backends


def _is_trivial(mask: np.ndarray) -> bool:
    s = int(mask.sum())
    return s == 0 or s == mask.size


class PurityBackend:
    L: int

    def purities(self, masks) -> np.ndarray:
        masks = np.atleast_2d(np.asarray(masks, dtype=np.int64))
        if masks.shape[1] != self.L:
            raise ValueError(f"mask length {masks.shape[1]} does not match L={self.L}")
        return self._purities(masks)

    def purity(self, p: Partition | Sequence[int] | str) -> float:
        if isinstance(p, str):
            p = Partition.from_string(p)
        mask = p.mask if isinstance(p, Partition) else tuple(p)
        return float(self.purities(np.asarray([mask]))[0])

    def _purities(self, masks: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class DensePurity(PurityBackend):
    """Purities of a dense qudit state from the Gram matrix of the smaller side."""

    def __init__(self, state: DenseState, entropy_kind: str = "renyi2"):
        if entropy_kind not in ("renyi2", "von_neumann"):
            raise ValueError(f"unknown entropy kind {entropy_kind!r}")
        if state.norm == 0.0:
            raise ValueError("zero-norm state")
        self.state = state
        self.L = state.L
        self.kind = entropy_kind
        self._psi = (state.amps / state.norm).reshape(state.dims)

    def _one(self, mask: np.ndarray) -> float:
        if _is_trivial(mask):
            return 1.0
        a = [i for i in range(self.L) if mask[i]]
        b = [i for i in range(self.L) if not mask[i]]
        d_a = math.prod(self.state.dims[i] for i in a)
        m = self._psi.transpose(a + b).reshape(d_a, -1)
        gram = m @ m.conj().T if m.shape[0] <= m.shape[1] else m.conj().T @ m
        tr = float(np.trace(gram).real)
        if self.kind == "renyi2":
            return float(np.sum(np.abs(gram) ** 2) / tr**2)
        p = np.clip(np.linalg.eigvalsh(gram) / tr, 0.0, None)
        p = p[p > 0]
        return float(np.exp(np.sum(p * np.log(p))))

    def _purities(self, masks):
        return np.array([self._one(m) for m in masks])


def purity_dense(state: DenseState, p: Partition | Sequence[int] | str, entropy_kind: str = "renyi2") -> float:
    return DensePurity(state, entropy_kind).purity(p)


def _parity(n_modes: int) -> np.ndarray:
    """(-1)^(number of occupied modes) over a big-endian occupation register."""
    if n_modes == 0:
        return np.ones(1)
    counts = np.zeros(1, dtype=np.int64)
    for _ in range(n_modes):
        counts = np.concatenate([counts, counts + 1])
    return (-1.0) ** counts


def fermionic_rdm(state: FermionState, keep: Sequence[int], order: Sequence[int] | None = None) -> np.ndarray:
    """Reduced density matrix of the modes in ``keep`` by sign-correct mode traces.

    Tracing mode m multiplies the occupied-occupied block by
    ``(-1)^(sum over remaining later modes of i_q + j_q)``. ``order`` fixes the
    sequence in which the other modes are traced (default: last mode first).
    """
    n = state.n_modes
    keep = sorted(set(keep))
    drop = [m for m in range(n) if m not in keep]
    if order is None:
        order = sorted(drop, reverse=True)
    elif sorted(order) != drop:
        raise ValueError("trace order must list exactly the modes outside the region")
    psi = state.amps / np.linalg.norm(state.amps)
    rho = np.outer(psi, psi.conj())
    modes = list(range(n))
    for m in order:
        x = modes.index(m)
        before, after = x, len(modes) - x - 1
        r = rho.reshape(2**before, 2, 2**after, 2**before, 2, 2**after)
        par = _parity(after)
        rho = r[:, 0, :, :, 0, :] + r[:, 1, :, :, 1, :] * par[None, :, None, None] * par[None, None, None, :]
        modes.pop(x)
        rho = rho.reshape(2 ** len(modes), 2 ** len(modes))
        if np.max(np.abs(rho - rho.conj().T)) > 1e-10:
            raise RuntimeError(f"non-Hermitian reduced density matrix after tracing mode {m}")
    return rho


class FermionPurity(PurityBackend):
    """Purities of a fermionic state from sign-correct reduced density matrices.

    A region and its complement have equal purity when the state has definite
    fermion parity, as every physical state does.
    """

    def __init__(self, state: FermionState):
        if np.linalg.norm(state.amps) == 0.0:
            raise ValueError("zero-norm state")
        self.state = state
        self.L = state.n_modes

    def _one(self, mask) -> float:
        if _is_trivial(mask):
            return 1.0
        rho = fermionic_rdm(self.state, [i for i in range(self.L) if mask[i]])
        tr = float(np.trace(rho).real)
        if abs(tr - 1.0) > 1e-10:
            raise RuntimeError(f"reduced density matrix has trace {tr}")
        return float(np.sum(np.abs(rho) ** 2) / tr**2)

    def _purities(self, masks):
        return np.array([self._one(m) for m in masks])


def purity_fermionic(state: FermionState, p: Partition | Sequence[int] | str) -> float:
    return FermionPurity(state).purity(p)


def _real_basis(dim: int) -> np.ndarray:
    """Unitary V with columns fixed by conj + ket/bra swap of the four-copy space.

    ``dim`` is phi; the space has phi**4 states labelled (a, b, c, e) for
    ket1, bra1, ket2, bra2.
    """
    n = dim**4
    idx = np.arange(n).reshape(dim, dim, dim, dim)
    swapped = idx.transpose(1, 0, 3, 2).ravel()
    cols = []
    for x in range(n):
        px = int(swapped[x])
        if px == x:
            v = np.zeros(n, dtype=complex)
            v[x] = 1.0
            cols.append(v)
        elif x < px:
            v = np.zeros(n, dtype=complex)
            v[x], v[px] = 1 / np.sqrt(2), 1 / np.sqrt(2)
            w = np.zeros(n, dtype=complex)
            w[x], w[px] = 1j / np.sqrt(2), -1j / np.sqrt(2)
            cols.extend([v, w])
    return np.array(cols).T


def _ef_site_matrices(core: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Complex four-copy transfer matrices (identity, swap) of one MPS core."""
    l, _, r = core.shape
    cc = core.conj()
    t = np.einsum("asx,bsy->abxy", core, cc)
    e0 = np.einsum("abxy,cezw->abcexyzw", t, t)
    e1 = np.einsum("asx,bty,ctz,esw->abcexyzw", core, cc, core, cc)
    return e0.reshape(l**4, r**4), e1.reshape(l**4, r**4)


def _ef_real_matrices(mps: MPS) -> list[tuple[np.ndarray, np.ndarray]]:
    bases = {}
    out = []
    for core in mps.cores:
        l, _, r = core.shape
        for dim in (l, r):
            if dim not in bases:
                bases[dim] = _real_basis(dim)
        mats = []
        for e in _ef_site_matrices(core):
            er = bases[l].conj().T @ e @ bases[r]
            scale = max(float(np.max(np.abs(er))), 1e-300)
            if np.max(np.abs(er.imag)) > 1e-12 * scale:
                raise RuntimeError("four-copy transfer matrix has an imaginary residue")
            mats.append(er.real.copy())
        out.append((mats[0], mats[1]))
    return out


def mps_norm_sq(mps: MPS) -> float:
    env = np.ones((1, 1), dtype=complex)
    for core in mps.cores:
        env = np.einsum("ab,asx,bsy->xy", env, core, core.conj())
    return float(env[0, 0].real)


def mps_ef_build(mps: MPS, basis: str = "natural") -> TensorTrain:
    """Natural-basis entanglement-feature tensor train of an MPS, bond dimension phi**4.

    Divided by the squared norm so the empty-region entry is 1.
    """
    if basis != "natural":
        raise ValueError("direct construction is available in the natural basis only")
    mats = _ef_real_matrices(mps)
    cores = [np.stack([e0, e1], axis=1) for e0, e1 in mats]
    cores[0] = cores[0] / mps_norm_sq(mps) ** 2
    return TensorTrain(cores)


class MPSPurity(PurityBackend):
    """Purities of an MPS by a transfer product of four-copy matrices per mask."""

    def __init__(self, mps: MPS):
        self.mps = mps
        self.L = mps.L
        self._mats = _ef_real_matrices(mps)
        self._norm4 = mps_norm_sq(mps) ** 2

    def _purities(self, masks):
        vecs = np.ones((masks.shape[0], 1))
        for site, (e0, e1) in enumerate(self._mats):
            bit = masks[:, site].astype(bool)[:, None]
            vecs = np.where(bit, vecs @ e1, vecs @ e0)
        out = vecs[:, 0] / self._norm4
        sums = masks.sum(axis=1)
        out[(sums == 0) | (sums == self.L)] = 1.0
        return out


def purity_mps(mps: MPS, p: Partition | Sequence[int] | str) -> float:
    return MPSPurity(mps).purity(p)


def purity_haar_analytic(L: int, d: int, p: Partition | Sequence[int] | str, clip: bool = True) -> float:
    """Average Haar purity ``d^-|A| + d^-(L-|A|)``; pinned to 1 at the empty/full region if ``clip``."""
    return HaarAnalyticPurity(L, d, clip=clip).purity(p)


class HaarAnalyticPurity(PurityBackend):
    """Symmetrized average Haar purity.

    With ``clip=False`` the empty and full regions give ``1 + d^-L`` and the
    feature is an exact sum of two product states (rank 2).
    """

    def __init__(self, L: int, d: int = 2, clip: bool = False):
        if d < 2:
            raise ValueError("local dimension must be >= 2")
        self.L = L
        self.d = d
        self.clip = clip

    def _purities(self, masks):
        k = masks.sum(axis=1).astype(float)
        out = self.d ** (-k) + self.d ** (-(self.L - k))
        if self.clip:
            out[(k == 0) | (k == self.L)] = 1.0
        return out


class EnumeratedPurity(PurityBackend):
    """All purities of another backend, computed once and looked up by mask.

    Only the 2^(L-1) regions containing the first site are stored; the rest
    follow from the complement symmetry.
    """

    def __init__(self, backend: PurityBackend, max_sites: int = 20):
        if backend.L > max_sites:
            raise ValueError(f"refusing to enumerate 2^{backend.L - 1} purities")
        self.L = backend.L
        self.backend = backend
        duals = np.array(list(itertools.product((0, 1), repeat=self.L - 1)), dtype=np.int64).reshape(-1, self.L - 1)
        self.table = backend.purities(dual_to_natural_masks(duals))

    def _purities(self, masks):
        duals = natural_to_dual_masks(masks)
        weights = 2 ** np.arange(self.L - 2, -1, -1, dtype=np.int64)
        return self.table[duals @ weights]


# --------------------------------------------------------------------------
# oracle adapters


@dataclass
class OracleStats:
    distinct_queries: int = 0
    total_queries: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def as_dict(self) -> dict:
        return {"distinct_queries": self.distinct_queries, "total_queries": self.total_queries}


class PurityOracle:
    """Batch oracle over an index space backed by a purity backend, with an exact cache."""

    def __init__(self, backend: PurityBackend, space: IndexSpace, to_masks, stats: OracleStats | None = None):
        self.backend = backend
        self.space = space
        self.to_masks = to_masks
        self.stats = stats if stats is not None else OracleStats()
        self.cache: dict[tuple[int, ...], float] = {}
        self._lock = threading.Lock()

    def __call__(self, indices) -> np.ndarray:
        indices = np.atleast_2d(np.asarray(indices, dtype=np.int64))
        keys = [tuple(row) for row in indices.tolist()]
        missing = list(dict.fromkeys(k for k in keys if k not in self.cache))
        if missing:
            vals = self.backend.purities(self.to_masks(np.array(missing, dtype=np.int64)))
            with self._lock:
                self.cache.update(zip(missing, vals.tolist()))
        with self.stats._lock:
            self.stats.total_queries += len(keys)
            self.stats.distinct_queries += len(missing)
        return np.array([self.cache[k] for k in keys], dtype=float)


def natural_oracle(backend: PurityBackend, stats: OracleStats | None = None) -> PurityOracle:
    return PurityOracle(backend, IndexSpace((2,) * backend.L), lambda idx: idx, stats)


def dual_oracle(backend: PurityBackend, stats: OracleStats | None = None) -> PurityOracle:
    if backend.L < 2:
        raise ValueError("dual basis needs at least 2 sites")
    return PurityOracle(backend, IndexSpace((2,) * (backend.L - 1)), dual_to_natural_masks, stats)


def fixed_size_oracle(backend: PurityBackend, pool: Sequence[int], k: int, stats: OracleStats | None = None) -> PurityOracle:
    """Oracle over 0-based fixed-subsystem-size indices with dims ``(n, n-1, ..., n-k+1)``."""
    pool = list(pool)
    if not 1 <= k <= len(pool):
        raise ValueError(f"k={k} outside [1, {len(pool)}]")
    L = backend.L

    def to_masks(idx):
        masks = np.zeros((idx.shape[0], L), dtype=np.int64)
        for row, ix in enumerate(idx):
            masks[row, list(fixed_size_decode(ix + 1, pool))] = 1
        return masks

    space = IndexSpace(tuple(len(pool) - j for j in range(k)))
    return PurityOracle(backend, space, to_masks, stats)
