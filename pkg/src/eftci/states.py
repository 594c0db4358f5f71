"""Generators for the benchmark state families, by dense construction and
dense Hermitian diagonalization."""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np
import scipy.linalg

from .oracles import (
    MPS,
    DensePurity,
    DenseState,
    FermionPurity,
    FermionState,
    HaarAnalyticPurity,
    MPSPurity,
    PurityBackend,
)

MAX_DENSE_DIM = 2**24
MID_SPECTRUM_TARGET = 1e-3

# named parameter sets of the Ising chain
TFIM_PRESETS = {
    "chaotic": dict(J=-1.0, g=-1.05, h=0.5, W=0.0, target="mid_spectrum"),
    "weak": dict(J=0.632, g=0.902, h=0.0, W=1.0, target="mid_spectrum"),
    "mblt": dict(J=0.632, g=0.902, h=0.0, W=2.5, target="mid_spectrum"),
    "mbl": dict(J=0.632, g=0.902, h=0.0, W=5.0, target="mid_spectrum"),
    "critical": dict(J=-1.0, g=-1.0, h=0.0, W=0.0, target="ground"),
}


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def _complex_gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    """Circularly symmetric complex normal with E|z|^2 = 1."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def gen_haar(L: int, seed=None, d: int = 2) -> DenseState:
    if d**L > MAX_DENSE_DIM:
        raise ValueError(f"Haar state with d={d}, L={L} is too large for dense storage")
    amps = _complex_gaussian(_rng(seed), d**L)
    return DenseState((d,) * L, amps / np.linalg.norm(amps))


def gen_product(L: int, d: int = 2) -> DenseState:
    amps = np.zeros(d**L, dtype=complex)
    amps[0] = 1.0
    return DenseState((d,) * L, amps)


def gen_random_mps(L: int, phi: int, seed=None, d: int = 2) -> MPS:
    """Random MPS in left-canonical form with unit norm.

    Every core is an independent Gaussian matrix made isometric by QR (a
    Haar-random isometry), the last one a normalized Gaussian vector. Bond
    dimensions are ``min(phi, d**l, d**(L-l))``.
    """
    if phi < 1:
        raise ValueError("bond dimension must be >= 1")
    rng = _rng(seed)
    bonds = [min(phi, d**l, d ** (L - l)) for l in range(L + 1)]
    cores = []
    for l in range(L):
        r0, r1 = bonds[l], bonds[l + 1]
        q, r = np.linalg.qr(_complex_gaussian(rng, (r0 * d, r1)))
        # phase fix makes q Haar distributed
        q = q * (np.diag(r) / np.abs(np.diag(r)))
        cores.append(q.reshape(r0, d, r1))
    cores[-1] = cores[-1] / np.linalg.norm(cores[-1])
    return MPS(cores)


def tfim_disorder(L: int, W: float, seed=None) -> np.ndarray:
    """On-site random fields drawn uniformly from [0, W]."""
    return _rng(seed).uniform(0.0, W, size=L) if W > 0 else np.zeros(L)


def build_tfim(L: int, J: float, g: float, h: float, W: float = 0.0, seed=None, fields=None) -> np.ndarray:
    """Dense open-chain Ising Hamiltonian with transverse field g and longitudinal field h + r_i."""
    r = tfim_disorder(L, W, seed) if fields is None else np.asarray(fields, dtype=float)
    dim = 2**L
    states = np.arange(dim)
    # sigma^z eigenvalue +1 for bit 0, site 0 is the most significant bit
    z = 1 - 2 * ((states[:, None] >> np.arange(L - 1, -1, -1)[None, :]) & 1)
    diag = J * np.sum(z[:, :-1] * z[:, 1:], axis=1) + z @ (h + r)
    ham = np.diag(diag.astype(float))
    for site in range(L):
        ham[states, states ^ (1 << (L - 1 - site))] += g
    return ham


def eigenstate(ham: np.ndarray, target: str = "ground", return_energy: bool = False):
    """Ground state, or the eigenvector whose energy is closest to 1e-3."""
    n = ham.shape[0]
    if n > 2**14:
        raise ValueError("dense diagonalization is limited to dimension 2^14")
    if target == "ground":
        k = 0
    elif target == "mid_spectrum":
        energies = scipy.linalg.eigvalsh(ham)
        k = int(np.argmin(np.abs(energies - MID_SPECTRUM_TARGET)))
    else:
        raise ValueError(f"unknown target {target!r}")
    w, v = scipy.linalg.eigh(ham, subset_by_index=[k, k])
    L = int(round(math.log2(n)))
    state = DenseState((2,) * L, v[:, 0])
    return (state, float(w[0])) if return_energy else state


def build_gue_h(L: int, seed=None) -> np.ndarray:
    """Sum of independent 4x4 GUE terms on neighbouring pairs.

    Each term is ``(G + G^+)/2`` with real and imaginary parts of G standard
    normal, giving unit variance on and off the diagonal.
    """
    rng = _rng(seed)
    ham = np.zeros((2**L, 2**L), dtype=complex)
    for j in range(L - 1):
        g = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        term = (g + g.conj().T) / 2
        ham += np.kron(np.kron(np.eye(2**j), term), np.eye(2 ** (L - j - 2)))
    return ham


def majorana_operators(n_modes: int) -> list[np.ndarray]:
    """Majoranas with sqrt(2) chi_{2k-1} = c_k^+ + c_k and sqrt(2) chi_{2k} = i (c_k - c_k^+).

    Jordan-Wigner in the canonically ordered occupation basis, mode 1 slowest.
    """
    z = np.diag([1.0, -1.0])
    annihilate = np.array([[0.0, 1.0], [0.0, 0.0]])
    ops = []
    for k in range(n_modes):
        c = np.kron(np.kron(_kron_power(z, k), annihilate), np.eye(2 ** (n_modes - k - 1)))
        cd = c.T
        ops.append((cd + c) / np.sqrt(2))
        ops.append(1j * (c - cd) / np.sqrt(2))
    return ops


def _kron_power(m: np.ndarray, n: int) -> np.ndarray:
    out = np.eye(1)
    for _ in range(n):
        out = np.kron(out, m)
    return out


def build_syk(n_modes: int, seed=None) -> np.ndarray:
    """SYK Hamiltonian on N = 2 n_modes Majoranas with couplings of unit variance."""
    if n_modes > 7:
        raise ValueError("SYK is limited to 7 Dirac modes")
    chis = majorana_operators(n_modes)
    n = len(chis)
    rng = _rng(seed)
    ham = np.zeros((2**n_modes, 2**n_modes), dtype=complex)
    prefactor = -np.sqrt(6) / n**1.5 * 4
    for i, j, k, l in itertools.combinations(range(n), 4):
        ham += prefactor * rng.standard_normal() * (chis[i] @ chis[j] @ chis[k] @ chis[l])
    if np.max(np.abs(ham - ham.conj().T)) > 1e-10:
        raise RuntimeError("SYK Hamiltonian is not Hermitian")
    return (ham + ham.conj().T) / 2


def syk_ground_state(n_modes: int, seed=None) -> FermionState:
    """Lowest eigenvector within a fermion-parity sector (even wins ties)."""
    ham = build_syk(n_modes, seed)
    parity = np.array([bin(x).count("1") % 2 for x in range(2**n_modes)])
    best = None
    for sector in (0, 1):
        idx = np.flatnonzero(parity == sector)
        w, v = scipy.linalg.eigh(ham[np.ix_(idx, idx)], subset_by_index=[0, 0])
        if best is None or w[0] < best[0] - 1e-12:
            amps = np.zeros(2**n_modes, dtype=complex)
            amps[idx] = v[:, 0]
            best = (w[0], amps)
    return FermionState(n_modes, best[1])


def _balanced_paths(L: int, colors: int, flat: bool) -> list[list[int]]:
    """Colour-balanced Motzkin (flat=True) or Dyck paths as step labels.

    Labels: 0 flat, 1..c up with colour, c+1..2c down with colour; for Dyck
    paths, 0..c-1 up and c..2c-1 down.
    """
    paths = []
    up0 = 1 if flat else 0

    def walk(prefix, stack):
        remaining = L - len(prefix)
        if len(stack) > remaining:
            return
        if remaining == 0:
            paths.append(list(prefix))
            return
        if flat:
            walk(prefix + [0], stack)
        for col in range(colors):
            walk(prefix + [up0 + col], stack + [col])
        if stack:
            walk(prefix + [up0 + colors + stack[-1]], stack[:-1])

    walk([], [])
    return paths


def _equal_superposition(paths, L: int, d: int) -> DenseState:
    if d**L > MAX_DENSE_DIM:
        raise ValueError(f"local dimension {d} at L={L} is too large for dense storage")
    if not paths:
        raise ValueError("no valid path for these parameters")
    weights = d ** np.arange(L - 1, -1, -1)
    amps = np.zeros(d**L, dtype=complex)
    amps[np.array(paths) @ weights] = 1.0
    return DenseState((d,) * L, amps / np.sqrt(len(paths)))


def gen_motzkin(L: int, colors: int = 1) -> DenseState:
    return _equal_superposition(_balanced_paths(L, colors, flat=True), L, 2 * colors + 1)


def gen_fredkin(L: int) -> DenseState:
    """Spin-1/2 Fredkin state: equal superposition of Dyck paths (up 0, down 1)."""
    if L % 2:
        raise ValueError("Fredkin state needs an even number of sites")
    return _equal_superposition(_balanced_paths(L, 1, flat=False), L, 2)


# --------------------------------------------------------------------------
# model specifications


FAMILIES = ("haar", "haar_analytic", "random_mps", "tfim", "gue_h", "syk", "motzkin", "fredkin", "product")


@dataclass
class ModelSpec:
    family: str
    L: int
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.family in TFIM_PRESETS:
            self.params = {**TFIM_PRESETS[self.family], **self.params, "preset": self.family}
            self.family = "tfim"
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.family == "tfim":
            missing = {"J", "g", "h", "W"} - set(self.params)
            if missing:
                raise ValueError(f"tfim needs parameters {sorted(missing)}")
        if self.family == "random_mps" and "phi" not in self.params:
            raise ValueError("random_mps needs parameter phi")

    @property
    def is_random(self) -> bool:
        return self.family in ("haar", "random_mps", "gue_h", "syk") or (
            self.family == "tfim" and self.params.get("W", 0.0) > 0
        )

    def name(self) -> str:
        if self.family == "tfim" and "preset" in self.params:
            return self.params["preset"]
        if self.family == "motzkin":
            return f"motzkin{self.params.get('colors', 1)}"
        return self.family

    def to_dict(self) -> dict:
        return asdict(self)


def make_state(spec: ModelSpec, seed=None):
    """Generate the state of a model spec; returns ``(state, meta)``.

    ``state`` is a DenseState, FermionState or MPS; ``meta`` records what is
    needed to reproduce it (including drawn disorder).
    """
    p = spec.params
    meta: dict[str, Any] = {"spec": spec.to_dict(), "seed": seed}
    fam = spec.family
    if fam == "haar":
        return gen_haar(spec.L, seed), meta
    if fam == "product":
        return gen_product(spec.L), meta
    if fam == "random_mps":
        return gen_random_mps(spec.L, int(p["phi"]), seed), meta
    if fam == "tfim":
        fields = tfim_disorder(spec.L, p["W"], seed)
        meta["disorder"] = fields.tolist()
        ham = build_tfim(spec.L, p["J"], p["g"], p["h"], fields=fields)
        state, energy = eigenstate(ham, p.get("target", "mid_spectrum"), return_energy=True)
        meta["energy"] = energy
        return state, meta
    if fam == "gue_h":
        state, energy = eigenstate(build_gue_h(spec.L, seed), "ground", return_energy=True)
        meta["energy"] = energy
        return state, meta
    if fam == "syk":
        return syk_ground_state(spec.L, seed), meta
    if fam == "motzkin":
        return gen_motzkin(spec.L, int(p.get("colors", 1))), meta
    if fam == "fredkin":
        return gen_fredkin(spec.L), meta
    raise ValueError(f"family {fam!r} has no state")


def make_backend(spec: ModelSpec, seed=None) -> tuple[PurityBackend, dict]:
    """Purity backend for a model spec; ``haar_analytic`` needs no state."""
    if spec.family == "haar_analytic":
        return HaarAnalyticPurity(spec.L, int(spec.params.get("d", 2))), {"spec": spec.to_dict(), "seed": seed}
    state, meta = make_state(spec, seed)
    if isinstance(state, MPS):
        return MPSPurity(state), meta
    if isinstance(state, FermionState):
        return FermionPurity(state), meta
    return DensePurity(state, spec.params.get("entropy_kind", "renyi2")), meta
