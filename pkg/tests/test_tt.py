import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from eftci.oracles import MPS, mps_ef_build
from eftci.tt import (
    TensorTrain,
    load_tt,
    save_tt,
    tt_compress_svd,
    tt_eval,
    tt_eval_batch,
    tt_from_dense,
    tt_full,
    tt_halfcut_spectrum,
    tt_inner,
    tt_norm,
)


def random_tt(dims, rank, seed):
    rng = np.random.default_rng(seed)
    ranks = [1] + [rank] * (len(dims) - 1) + [1]
    return TensorTrain([rng.standard_normal((ranks[i], d, ranks[i + 1])) for i, d in enumerate(dims)])


def haar_tt(L):
    """Sum of the product states (1, 1/2)^L and (1/2, 1)^L as a rank-2 train."""
    cores = []
    for pos in range(L):
        core = np.zeros((2, 2, 2))
        core[0, 0, 0], core[0, 1, 0] = 1.0, 0.5
        core[1, 0, 1], core[1, 1, 1] = 0.5, 1.0
        if pos == 0:
            core = core.sum(axis=0, keepdims=True)
        if pos == L - 1:
            core = core.sum(axis=2, keepdims=True)
        cores.append(core)
    return TensorTrain(cores)


def all_indices(dims):
    return np.array(list(itertools.product(*[range(d) for d in dims])))


class TestContainer:
    def test_rejects_bad_boundary(self):
        with pytest.raises(ValueError):
            TensorTrain([np.ones((2, 2, 1))])

    def test_rejects_rank_mismatch(self):
        with pytest.raises(ValueError, match="rank mismatch"):
            TensorTrain([np.ones((1, 2, 2)), np.ones((3, 2, 1))])

    def test_rejects_nonfinite(self):
        core = np.ones((1, 2, 1))
        core[0, 1, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            TensorTrain([core])

    def test_cores_read_only(self):
        tt = random_tt((2, 2), 2, 0)
        with pytest.raises(ValueError):
            tt.cores[0][0, 0, 0] = 1.0

    def test_ranks(self):
        tt = random_tt((2, 3, 2), 2, 0)
        assert tt.ranks == (1, 2, 2, 1)
        assert tt.dims == (2, 3, 2)


class TestEval:
    def test_all_ones(self):
        tt = TensorTrain([np.ones((1, 2, 1))] * 3)
        assert tt_eval(tt, (1, 0, 1)) == 1.0

    def test_haar_entry(self):
        assert_allclose(tt_eval(haar_tt(4), (1, 1, 0, 0)), 0.5, rtol=1e-15)

    def test_dense_round_trip(self):
        rng = np.random.default_rng(3)
        v = rng.standard_normal(2 * 3 * 2 * 2)
        tt = tt_from_dense(v, (2, 3, 2, 2))
        for flat, idx in enumerate(all_indices((2, 3, 2, 2))):
            assert_allclose(tt_eval(tt, idx), v[flat], rtol=1e-12, atol=1e-14)

    def test_out_of_range_names_position(self):
        tt = random_tt((2, 2, 2), 2, 0)
        with pytest.raises(IndexError, match="position 2"):
            tt_eval(tt, (0, 1, 2))

    def test_wrong_length(self):
        with pytest.raises(IndexError):
            tt_eval(random_tt((2, 2), 1, 0), (0,))

    def test_batch_matches_single(self):
        tt = random_tt((2, 3, 4), 3, 1)
        idx = all_indices(tt.dims)
        assert_allclose(tt_eval_batch(tt, idx), [tt_eval(tt, i) for i in idx], rtol=1e-13)
        assert_allclose(tt_full(tt), [tt_eval(tt, i) for i in idx], rtol=1e-13)


class TestInner:
    def test_counts_entries(self):
        ones = TensorTrain([np.ones((1, 2, 1))] * 2)
        assert tt_inner(ones, ones) == 4.0

    def test_matches_enumeration(self):
        a, b = random_tt((2,) * 6, 2, 1), random_tt((2,) * 6, 2, 2)
        assert_allclose(tt_inner(a, b), np.dot(tt_full(a), tt_full(b)), rtol=1e-10)

    def test_dims_mismatch(self):
        with pytest.raises(ValueError):
            tt_inner(random_tt((2, 2), 1, 0), random_tt((2, 3), 1, 0))

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.integers(1, 3), min_size=1, max_size=5), st.integers(1, 3), st.integers(0, 2**31))
    def test_norm_nonnegative_and_matches(self, dims, rank, seed):
        a = random_tt(dims, rank, seed)
        assert tt_inner(a, a) >= 0
        assert_allclose(tt_norm(a), np.linalg.norm(tt_full(a)), rtol=1e-10)


class TestCompress:
    def test_separable_goes_to_rank_one(self):
        rng = np.random.default_rng(0)
        vecs = [rng.uniform(0.5, 2, 2) for _ in range(5)]
        # pad a separable function to rank 4 with zero blocks
        cores = []
        for pos, v in enumerate(vecs):
            r0 = 1 if pos == 0 else 4
            r1 = 1 if pos == 4 else 4
            c = np.zeros((r0, 2, r1))
            c[0, :, 0] = v
            cores.append(c)
        tt = TensorTrain(cores)
        out = tt_compress_svd(tt, tol=1e-12)
        assert out.max_rank == 1
        assert_allclose(tt_full(out), tt_full(tt), rtol=1e-12)

    def test_lossless(self):
        tt = random_tt((2, 3, 2, 2), 3, 5)
        out = tt_compress_svd(tt)
        assert_allclose(tt_full(out), tt_full(tt), rtol=1e-12, atol=1e-12 * np.abs(tt_full(tt)).max())

    def test_mps_feature_compresses(self):
        rng = np.random.default_rng(4)
        L, phi = 8, 2
        bonds = [1] + [phi] * (L - 1) + [1]
        mps = MPS([rng.standard_normal((bonds[l], 2, bonds[l + 1])) + 1j * rng.standard_normal((bonds[l], 2, bonds[l + 1])) for l in range(L)])
        ef = mps_ef_build(mps)
        assert ef.max_rank == 16
        out = tt_compress_svd(ef, tol=1e-10)
        assert max(out.ranks[1:-1]) < 16
        full = tt_full(ef)
        assert np.linalg.norm(tt_full(out) - full) <= 1e-10 * np.sqrt(L) * np.linalg.norm(full)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 6), st.integers(1, 4), st.floats(0, 0.3), st.integers(1, 4), st.integers(0, 2**31))
    def test_error_bound_and_ranks(self, n, rank, tol, max_rank, seed):
        tt = random_tt((2,) * n, rank, seed)
        out = tt_compress_svd(tt, tol=tol)
        full = tt_full(tt)
        assert np.linalg.norm(tt_full(out) - full) <= tol * np.sqrt(n) * np.linalg.norm(full) + 1e-12
        assert all(a <= b for a, b in zip(out.ranks, tt.ranks))
        capped = tt_compress_svd(tt, tol=tol, max_rank=max_rank)
        assert capped.max_rank <= max_rank

    def test_bad_arguments(self):
        tt = random_tt((2, 2), 1, 0)
        with pytest.raises(ValueError):
            tt_compress_svd(tt, tol=-1)
        with pytest.raises(ValueError):
            tt_compress_svd(tt, max_rank=0)


class TestFromDense:
    def test_constant_is_rank_one(self):
        assert tt_from_dense([1, 1, 1, 1], (2, 2)).max_rank == 1

    def test_worked_example_vector(self):
        values = [1, 1, 0.5, 0.5, 0.5, 0.5, 1, 1]
        tt = tt_from_dense(values, (2, 2, 2))
        assert_allclose(tt_full(tt), values, rtol=1e-12)

    def test_random_exact(self):
        v = np.random.default_rng(9).standard_normal(64)
        assert np.max(np.abs(tt_full(tt_from_dense(v, (2,) * 6)) - v)) < 1e-12

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            tt_from_dense(np.ones(5), (2, 2))

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.integers(1, 4), min_size=1, max_size=6), st.integers(0, 2**31))
    def test_round_trip_property(self, dims, seed):
        v = np.random.default_rng(seed).standard_normal(int(np.prod(dims)))
        assert_allclose(tt_full(tt_from_dense(v, dims)), v, rtol=1e-12, atol=1e-12 * np.abs(v).max())


class TestSpectrum:
    def test_constant_feature(self):
        lam = tt_halfcut_spectrum(TensorTrain([np.ones((1, 2, 1))] * 6))
        assert_allclose(lam[0], 1.0, rtol=1e-14)
        assert np.all(lam[1:] == 0)

    def test_haar_two_values(self):
        lam = tt_halfcut_spectrum(haar_tt(10))
        assert np.count_nonzero(lam) == 2
        # independent value: with half-chain overlaps a = 1.25^5 and b = 1 the
        # squared Schmidt values are proportional to (a + b)^2 and (a - b)^2
        a, b = 1.25**5, 1.0
        expected = np.array([(a + b) ** 2, (a - b) ** 2]) / ((a + b) ** 2 + (a - b) ** 2)
        assert_allclose(lam[:2] ** 2, expected, rtol=1e-12)

    def test_matches_dense_svd(self):
        tt = random_tt((2,) * 7, 3, 11)
        full = tt_full(tt).reshape(2**3, 2**4)
        s = np.linalg.svd(full / np.linalg.norm(full), compute_uv=False)
        lam = tt_halfcut_spectrum(tt)
        assert_allclose(lam, s[: lam.size], atol=1e-12)
        assert np.all(s[lam.size :] < 1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 7), st.integers(1, 4), st.integers(0, 2**31))
    def test_normalized_descending(self, n, rank, seed):
        lam = tt_halfcut_spectrum(random_tt((2,) * n, rank, seed))
        assert_allclose(np.sum(lam**2), 1.0, atol=1e-10)
        assert np.all(np.diff(lam) <= 0)
        assert np.all(lam >= 0)

    def test_zero_norm_rejected(self):
        with pytest.raises(ValueError):
            tt_halfcut_spectrum(TensorTrain([np.zeros((1, 2, 1))] * 2))


def test_json_round_trip(tmp_path):
    tt = random_tt((2, 3, 2), 2, 0)
    save_tt(tt, tmp_path / "a.tt")
    back = load_tt(tmp_path / "a.tt")
    for a, b in zip(tt.cores, back.cores):
        assert np.array_equal(a, b)


def test_json_rejects_version(tmp_path):
    (tmp_path / "a.tt").write_text('{"version":2,"dims":[2],"cores":[]}')
    with pytest.raises(ValueError, match="version"):
        load_tt(tmp_path / "a.tt")
