import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from eftci.analysis import (
    SCAN_COLUMNS,
    EFRecord,
    bond_scan,
    chi_max_reference,
    distance_matrix,
    dual_masks,
    ef_distance,
    ef_spectrum_study,
    global_relative_error,
    layout_stress,
    learn_ef,
    loglog_slope,
    mean_bond_rank,
    reference_values,
    scan_csv,
    stress_layout,
    threshold_run,
)
from eftci.cross import TciOptions
from eftci.oracles import DensePurity, DenseState, HaarAnalyticPurity
from eftci.states import ModelSpec, gen_haar, gen_product
from eftci.tt import TensorTrain, tt_full


def bell_pair():
    return DenseState((2, 2), np.array([1, 0, 0, 1]) / np.sqrt(2))


def scaled(tt, factor):
    return TensorTrain([tt.cores[0] * factor] + list(tt.cores[1:]))


class TestLearn:
    def test_product_rank_one(self):
        rec = learn_ef(DensePurity(gen_product(6)))
        assert rec.converged
        assert rec.max_chi == 1
        assert_allclose(tt_full(rec.tt), 1.0)

    def test_haar_analytic_rank_two(self):
        rec = learn_ef(HaarAnalyticPurity(12))
        assert rec.converged and rec.max_chi <= 2
        assert global_relative_error(rec.tt, HaarAnalyticPurity(12)) < 1e-12

    def test_worked_example_natural(self):
        state = DenseState((2, 2, 2), np.array([1, 0, 0, 0, 0, 0, 1, 0]) / np.sqrt(2))
        rec = learn_ef(DensePurity(state), basis="natural")
        assert_allclose(tt_full(rec.tt), [1, 1, 0.5, 0.5, 0.5, 0.5, 1, 1], rtol=1e-12)
        assert rec.stats.distinct_queries <= 8

    def test_eps_threshold_stops(self):
        backend = DensePurity(gen_haar(8, seed=3))
        rec = learn_ef(backend, eps_th=1.1**-40)
        assert rec.stop_reason == "eps_th"
        assert rec.eps <= 1.1**-40
        assert_allclose(global_relative_error(rec.tt, backend), rec.eps, rtol=1e-12)

    def test_natural_and_dual_agree(self):
        backend = DensePurity(gen_haar(6, seed=1))
        dual = learn_ef(backend, "dual")
        nat = learn_ef(backend, "natural")
        assert global_relative_error(dual.tt, backend) < 1e-10
        assert global_relative_error(nat.tt, backend, basis="natural") < 1e-10

    def test_sidecar(self):
        rec = learn_ef(HaarAnalyticPurity(5), opts=TciOptions(seed=9))
        side = rec.sidecar()
        assert side["seed"] == 9 and side["basis"] == "dual" and side["L"] == 5
        assert side["n_queries"] == rec.stats.distinct_queries

    def test_record_checks_dims(self):
        with pytest.raises(ValueError):
            EFRecord(TensorTrain([np.ones((1, 2, 1))] * 3), "dual", 3)

    def test_unknown_basis(self):
        with pytest.raises(ValueError):
            learn_ef(HaarAnalyticPurity(4), basis="fourier")


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31))
def test_dual_origin_is_one(L, seed):
    # the all-zero dual index is the trivial cut
    values = reference_values(DensePurity(gen_haar(L, seed=seed)))
    assert_allclose(values[0], 1.0, rtol=1e-12)
    assert np.all(values > 0) and np.all(values <= 1 + 1e-12)


def test_dual_masks_are_distinct_up_to_complement():
    masks = dual_masks(6)
    keys = {min(tuple(m), tuple(1 - m)) for m in masks}
    assert len(keys) == 2**5


class TestGlobalError:
    def test_exact_is_zero(self):
        rec = learn_ef(HaarAnalyticPurity(8))
        assert global_relative_error(rec.tt, HaarAnalyticPurity(8)) < 1e-14

    def test_scaled_feature(self):
        backend = HaarAnalyticPurity(8)
        rec = learn_ef(backend)
        assert_allclose(global_relative_error(scaled(rec.tt, 1.01), backend), 0.01, rtol=1e-10)

    def test_enumeration_cap(self):
        with pytest.raises(ValueError):
            reference_values(HaarAnalyticPurity(20))


class TestDistance:
    def test_product_vs_bell(self):
        a = learn_ef(DensePurity(gen_product(2)))
        b = learn_ef(DensePurity(bell_pair()))
        assert_allclose(ef_distance(a, b), 0.5, rtol=1e-12)

    def test_matches_dense_norm(self):
        a = learn_ef(DensePurity(gen_haar(6, seed=0)))
        b = learn_ef(DensePurity(gen_haar(6, seed=1)))
        assert_allclose(ef_distance(a, b), np.linalg.norm(tt_full(a.tt) - tt_full(b.tt)), rtol=1e-10)

    def test_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ef_distance(learn_ef(HaarAnalyticPurity(4)), learn_ef(HaarAnalyticPurity(5)))

    def test_matrix_properties(self):
        recs = [learn_ef(DensePurity(gen_haar(5, seed=s))) for s in range(3)] + [learn_ef(DensePurity(gen_product(5)))]
        d = distance_matrix(recs)
        assert_allclose(d, d.T)
        assert np.all(np.diag(d) == 0)
        for i, j, k in itertools.permutations(range(4), 3):
            assert d[i, k] <= d[i, j] + d[j, k] + 1e-12


class TestLayout:
    def test_equilateral(self):
        d = 1 - np.eye(3)
        x, hist = stress_layout(d, seed=1)
        emb = np.linalg.norm(x[:, None] - x[None], axis=-1)
        assert_allclose(emb, d, atol=1e-6)
        assert hist[-1] < 1e-10

    def test_pinned_pair(self):
        d = 1 - np.eye(3)
        x, _ = stress_layout(d, pinned={0: (0, 0), 1: (1, 0)}, seed=2)
        assert_allclose(x[:2], [[0, 0], [1, 0]])
        assert_allclose([x[2, 0], abs(x[2, 1])], [0.5, np.sqrt(3) / 2], atol=1e-6)

    def test_all_pinned(self):
        d = 1 - np.eye(2)
        x, hist = stress_layout(d, pinned={0: (0, 0), 1: (3, 4)})
        assert_allclose(x, [[0, 0], [3, 4]])
        assert_allclose(hist[0], 1e-0 * (5 - 1) ** 2)

    def test_zero_distance_weight_capped(self):
        d = np.array([[0, 0, 1], [0, 0, 1], [1, 1, 0]], dtype=float)
        x, _ = stress_layout(d, seed=0)
        assert np.linalg.norm(x[0] - x[1]) < 1e-3
        assert np.all(np.isfinite(x))

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            stress_layout(np.array([[0, 1], [2, 0]]))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(3, 7), st.integers(0, 2**31), st.booleans())
    def test_stress_non_increasing(self, n, seed, pin):
        pts = np.random.default_rng(seed).standard_normal((n, 4))
        d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        _, hist = stress_layout(d, pinned={0: (0.0, 0.0)} if pin else None, seed=seed % 100)
        assert np.all(np.diff(hist) <= 1e-9 * hist[0])

    def test_stress_of_exact_embedding(self):
        x = np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 4.0]])
        d = np.linalg.norm(x[:, None] - x[None], axis=-1)
        assert layout_stress(x, d) == 0.0


class TestScan:
    def test_chi_reference(self):
        assert_allclose(chi_max_reference(5), 8 / 3)
        assert chi_max_reference(2) == 1.0

    def test_mean_bond_rank(self):
        tt = TensorTrain([np.ones((1, 2, 2)), np.ones((2, 2, 3)), np.ones((3, 2, 1))])
        assert mean_bond_rank(tt) == 2.5

    def test_product_and_determinism(self):
        specs = [ModelSpec("product", 6), ModelSpec("haar", 6)]
        rows, details = bond_scan(specs, [1e-3, 1e-6], n_state_samples=2, n_tci_runs=2, seed=5)
        again, _ = bond_scan(specs, [1e-3, 1e-6], n_state_samples=2, n_tci_runs=2, seed=5)
        assert scan_csv(rows) == scan_csv(again)
        product = [r for r in rows if r.family == "product"]
        assert len(product) == 2 and all(r.mean_chi == 1.0 and r.status == "ok" for r in product)
        assert len([r for r in rows if r.family == "haar"]) == 4
        assert len(details) == 2 + 4
        assert scan_csv(rows).splitlines()[0] == ",".join(SCAN_COLUMNS)

    def test_failed_job_marked(self):
        rows, _ = bond_scan([ModelSpec("haar_analytic", 16)], [1e-3], n_tci_runs=1)
        assert rows[0].status == "error:ValueError"

    def test_threshold_run(self):
        backend = DensePurity(gen_haar(8, seed=2))
        out = threshold_run(backend, [1e-2, 1e-8], TciOptions())
        assert all(o["reached"] for o in out)
        assert out[1]["eps"] <= 1e-8
        assert out[0]["queries"] <= out[1]["queries"]


class TestSpectrumStudy:
    def test_product_mps(self):
        rows = ef_spectrum_study([1], 6, n_samples=2)
        assert rows[0]["ratio"] == 0.0
        assert_allclose(rows[0]["lambdas"][0], 1.0)

    def test_slope(self):
        x = np.array([2.0, 3.0, 4.0, 5.0])
        assert_allclose(loglog_slope(x, 3 * x**-4), -4.0)
