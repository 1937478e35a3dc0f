"""Metric suite against hand computations, grid-search and brute-force oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snowtools.geometry import DepthMap, NormalMap
from snowtools.losses import RelativeDepthAnnotation
from snowtools.metrics import (
    ls_align,
    metric_suite,
    normal_error_stats,
    normalize_to_stats,
    wkdr,
    wkdr_sweep,
)

from conftest import tilted_normal


def grid_search_alignment(zp, zg, span=10.0, step=1e-3):
    """Dense (a, b) search; the closed form must land within one grid cell."""
    zp = zp.ravel()
    zg = zg.ravel()
    best = (math.inf, 0.0, 0.0)
    for a in np.arange(-span, span + step / 2, step):
        # For fixed a the optimal b is the mean residual; search only a.
        b = float(np.mean(zg - a * zp))
        r = a * zp + b - zg
        cost = float(r @ r)
        if cost < best[0]:
            best = (cost, float(a), b)
    return best


def brute_force_wkdr(zz, pairs, delta):
    u = np.log(zz)
    tot = miss = eq_t = eq_m = ne_t = ne_m = 0.0
    for a in pairs:
        du = u[a.i[1], a.i[0]] - u[a.j[1], a.j[0]]
        if abs(du) <= delta:
            pred = "="
        elif du > 0:
            pred = ">"
        else:
            pred = "<"
        bad = a.weight if pred != a.r else 0.0
        tot += a.weight
        miss += bad
        if a.r == "=":
            eq_t += a.weight
            eq_m += bad
        else:
            ne_t += a.weight
            ne_m += bad
    return miss / tot, (eq_m / eq_t if eq_t else 0.0), (ne_m / ne_t if ne_t else 0.0)


class TestMetricSuite:
    def test_identity_is_all_zero(self, rng):
        z = DepthMap(rng.uniform(1, 5, (6, 6)))
        rep = metric_suite(z, z)
        for v in rep.to_dict().values():
            assert v == pytest.approx(0.0, abs=1e-12)

    def test_global_doubling_scale_invariant_silog_only(self, rng):
        zz = rng.uniform(1, 5, (6, 6))
        rep = metric_suite(DepthMap(2 * zz), DepthMap(zz))
        assert rep.silog_rmse == pytest.approx(0.0, abs=1e-9)
        assert rep.rmse > 0

    def test_hand_computed_2x2(self):
        z = DepthMap(np.array([[1.0, 2.0], [3.0, 4.0]]))
        g = DepthMap(np.array([[2.0, 2.0], [4.0, 4.0]]))
        rep = metric_suite(z, g)
        # rmse = sqrt((1 + 0 + 1 + 0) / 4) = 1/sqrt(2)
        assert rep.rmse == pytest.approx(1 / math.sqrt(2), abs=1e-12)
        # absrel = (1/2 + 0 + 1/4 + 0) / 4
        assert rep.absrel == pytest.approx((0.5 + 0.25) / 4, abs=1e-12)
        # sqrrel = (1/2 + 0 + 1/4 + 0) / 4
        assert rep.sqrrel == pytest.approx((0.5 + 0.25) / 4, abs=1e-12)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            metric_suite(DepthMap(np.ones((2, 2))), DepthMap(np.ones((3, 3))))

    def test_non_positive_values_rejected(self):
        z = DepthMap(np.array([[1.0, -1.0]]))
        with pytest.raises(ValueError):
            metric_suite(z, DepthMap(np.ones((1, 2))))


class TestLsAlign:
    def test_exact_affine_relation(self, rng):
        zp = rng.uniform(1, 4, (5, 5))
        res = ls_align(DepthMap(zp), DepthMap(2 * zp + 3))
        assert res.a == pytest.approx(2.0, rel=1e-12)
        assert res.b == pytest.approx(3.0, rel=1e-12)
        assert res.ls_rmse == pytest.approx(0.0, abs=1e-9)

    def test_constant_prediction_gives_std(self, rng):
        zg = rng.uniform(1, 4, (6, 6))
        res = ls_align(DepthMap(np.full((6, 6), 2.0)), DepthMap(zg))
        assert res.a == 0.0
        assert res.b == pytest.approx(zg.mean(), rel=1e-12)
        assert res.ls_rmse == pytest.approx(zg.std(), rel=1e-12)

    def test_matches_grid_search_oracle(self, rng):
        zp = rng.uniform(0.5, 2.0, (8, 8))
        zg = 1.4 * zp + 0.3 + rng.normal(0, 0.1, (8, 8))
        res = ls_align(DepthMap(zp), DepthMap(zg))
        _, a_grid, b_grid = grid_search_alignment(zp, zg)
        assert abs(res.a - a_grid) <= 1e-3
        assert abs(res.b - b_grid) <= 1e-2  # b follows a's grid resolution

    def test_invariant_under_affine_prediction_maps(self, rng):
        # Any affine remap of the prediction leaves the alignable error
        # unchanged, including mirrored (negative scale) maps: the feasible
        # set of the inner least-squares problem is the same.
        zp = rng.uniform(1, 3, (7, 7))
        zg = rng.uniform(1, 3, (7, 7))
        base = ls_align(DepthMap(zp), DepthMap(zg)).ls_rmse
        for a, b in [(2.0, 0.0), (0.5, 1.0), (3.0, -0.7), (-1.5, 4.0)]:
            moved = ls_align(DepthMap(a * zp + b), DepthMap(zg)).ls_rmse
            assert moved == pytest.approx(base, abs=1e-9)

    def test_never_worse_than_rmse(self, rng):
        for _ in range(100):
            zp = rng.uniform(0.2, 5.0, (4, 4))
            zg = rng.uniform(0.2, 5.0, (4, 4))
            rep = metric_suite(DepthMap(zp), DepthMap(zg))
            assert rep.ls_rmse <= rep.rmse + 1e-12

    def test_residual_sum_exposed(self, rng):
        zp = rng.uniform(1, 2, (4, 4))
        zg = rng.uniform(1, 2, (4, 4))
        res = ls_align(DepthMap(zp), DepthMap(zg))
        assert res.ls_rmse == pytest.approx(math.sqrt(res.residual_sq_sum / 16), rel=1e-12)


class TestNormalize:
    def test_fixed_point(self, rng):
        zz = rng.uniform(1, 5, (6, 6))
        target_mean, target_std = float(zz.mean()), float(zz.std())
        out = normalize_to_stats(DepthMap(zz), target_mean, target_std)
        np.testing.assert_allclose(out.values, zz, atol=1e-12)

    def test_hand_computed_pair(self):
        out = normalize_to_stats(DepthMap(np.array([[1.0, 3.0]])), 10.0, 2.0)
        np.testing.assert_allclose(out.values, [[8.0, 12.0]])

    def test_constant_map_rejected(self):
        with pytest.raises(ValueError):
            normalize_to_stats(DepthMap(np.full((3, 3), 2.0)), 1.0, 1.0)

    def test_clamps_positive(self):
        out = normalize_to_stats(DepthMap(np.array([[1.0, 2.0, 3.0]])), 0.0, 1.0)
        assert np.all(out.values > 0)

    def test_preserves_attached_intrinsics(self, rng):
        from snowtools.geometry import CameraIntrinsics

        k = CameraIntrinsics(90.0, 4, 4)
        z = DepthMap(rng.uniform(1, 3, (4, 4)), intrinsics=k)
        out = normalize_to_stats(z, 5.0, 1.0)
        assert out.intrinsics is k


class TestWkdr:
    def test_perfect_predictor(self):
        z = DepthMap(np.array([[1.0, 2.0], [4.0, 8.0]]))
        pairs = [
            RelativeDepthAnnotation(i=(1, 1), j=(0, 0), r=">"),
            RelativeDepthAnnotation(i=(0, 0), j=(0, 1), r="<"),
        ]
        rep = wkdr(z, pairs, delta=0.05)
        assert rep.wkdr == 0.0
        assert rep.wkdr_neq == 0.0

    def test_single_disagreement(self):
        z = DepthMap(np.array([[1.0, 1.001]]))
        pairs = [RelativeDepthAnnotation(i=(1, 0), j=(0, 0), r=">")]
        rep = wkdr(z, pairs, delta=0.05)  # log gap ~0.001 < delta -> predicted '='
        assert rep.wkdr == 1.0
        assert rep.wkdr_neq == 1.0
        assert rep.wkdr_eq == 0.0

    def test_six_pair_hand_case_matches_enumeration(self):
        zz = np.array([[1.0, 1.01, 1.5], [2.0, 2.01, 4.0]])
        pairs = [
            RelativeDepthAnnotation(i=(0, 0), j=(1, 0), r="="),
            RelativeDepthAnnotation(i=(0, 0), j=(2, 0), r="<"),
            RelativeDepthAnnotation(i=(2, 1), j=(0, 1), r=">"),
            RelativeDepthAnnotation(i=(1, 1), j=(0, 1), r=">", weight=2.0),
            RelativeDepthAnnotation(i=(2, 0), j=(1, 1), r="=", weight=0.5),
            RelativeDepthAnnotation(i=(0, 1), j=(2, 1), r=">"),
        ]
        rep = wkdr(DepthMap(zz), pairs, delta=0.02)
        w, we, wn = brute_force_wkdr(zz, pairs, 0.02)
        assert rep.wkdr == pytest.approx(w, abs=1e-12)
        assert rep.wkdr_eq == pytest.approx(we, abs=1e-12)
        assert rep.wkdr_neq == pytest.approx(wn, abs=1e-12)

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_matches_brute_force_on_random_instances(self, seed):
        rng = np.random.default_rng(seed)
        zz = rng.uniform(0.5, 3.0, (5, 5))
        pairs = []
        for _ in range(40):
            ix, iy, jx, jy = rng.integers(0, 5, 4)
            if (ix, iy) == (jx, jy):
                continue
            pairs.append(
                RelativeDepthAnnotation(
                    i=(int(ix), int(iy)),
                    j=(int(jx), int(jy)),
                    r=str(rng.choice([">", "<", "="])),
                    weight=float(rng.uniform(0.1, 2.0)),
                )
            )
        delta = float(rng.uniform(0.0, 0.5))
        rep = wkdr(DepthMap(zz), pairs, delta)
        w, we, wn = brute_force_wkdr(zz, pairs, delta)
        assert rep.wkdr == pytest.approx(w, abs=1e-12)
        assert rep.wkdr_eq == pytest.approx(we, abs=1e-12)
        assert rep.wkdr_neq == pytest.approx(wn, abs=1e-12)

    def test_empty_pairs_rejected(self):
        with pytest.raises(ValueError):
            wkdr(DepthMap(np.ones((2, 2))), [], 0.1)


class TestWkdrSweep:
    def test_separated_data_picks_zero(self):
        z = DepthMap(np.array([[1.0, 2.0, 4.0]]))
        pairs = [
            RelativeDepthAnnotation(i=(1, 0), j=(0, 0), r=">"),
            RelativeDepthAnnotation(i=(2, 0), j=(1, 0), r=">"),
        ]
        best, rep = wkdr_sweep(z, pairs, [0.0])
        assert best == 0.0
        assert rep.wkdr == 0.0

    def test_middle_delta_balances_both_rates(self):
        # log gaps: pair A ('=') 0.2, pair B ('>') 0.4.  delta 0.0 misses A,
        # delta 0.5 misses B, delta 0.3 gets both.
        z = DepthMap(np.array([[1.0, math.exp(0.2), math.exp(0.6)]]))
        pairs = [
            RelativeDepthAnnotation(i=(1, 0), j=(0, 0), r="="),
            RelativeDepthAnnotation(i=(2, 0), j=(1, 0), r=">"),
        ]
        best, rep = wkdr_sweep(z, pairs, [0.0, 0.3, 0.5])
        assert best == 0.3
        assert max(rep.wkdr_eq, rep.wkdr_neq) == 0.0

    def test_tie_prefers_smaller_delta(self):
        z = DepthMap(np.array([[1.0, 2.0]]))
        pairs = [RelativeDepthAnnotation(i=(1, 0), j=(0, 0), r=">")]
        best, _ = wkdr_sweep(z, pairs, [0.2, 0.1])  # both correct -> tie
        assert best == 0.1

    def test_empty_grid_rejected(self):
        z = DepthMap(np.ones((2, 2)))
        with pytest.raises(ValueError):
            wkdr_sweep(z, [RelativeDepthAnnotation(i=(0, 0), j=(1, 1), r="=")], [])


class TestNormalErrorStats:
    def test_identical_normals(self):
        n = np.array([tilted_normal(20, 30)] * 5)
        rep = normal_error_stats(n, n)
        assert rep.mean_deg == pytest.approx(0.0, abs=1e-6)
        assert all(v == 1.0 for v in rep.pct_within.values())

    def test_boundary_inclusive_at_30(self):
        a = np.array([tilted_normal(0.0)])
        b = np.array([tilted_normal(30.0)])
        rep = normal_error_stats(a, b)
        assert rep.pct_within[30.0] == 1.0
        assert rep.pct_within[22.5] == 0.0

    def test_hand_computed_three_pairs(self):
        a = np.array([tilted_normal(0.0)] * 3)
        b = np.array([tilted_normal(10.0), tilted_normal(20.0), tilted_normal(40.0)])
        rep = normal_error_stats(a, b)
        assert rep.mean_deg == pytest.approx(70.0 / 3, rel=1e-9)
        assert rep.median_deg == pytest.approx(20.0, rel=1e-9)
        assert rep.pct_within[22.5] == pytest.approx(2 / 3, rel=1e-12)

    def test_median_midpoint_for_even_counts(self):
        a = np.array([tilted_normal(0.0)] * 4)
        b = np.array([tilted_normal(d) for d in (10.0, 20.0, 30.0, 40.0)])
        rep = normal_error_stats(a, b)
        assert rep.median_deg == pytest.approx(25.0, rel=1e-9)

    def test_symmetric_in_arguments(self, rng):
        a = np.array([tilted_normal(rng.uniform(0, 80), rng.uniform(0, 360)) for _ in range(6)])
        b = np.array([tilted_normal(rng.uniform(0, 80), rng.uniform(0, 360)) for _ in range(6)])
        r1 = normal_error_stats(a, b)
        r2 = normal_error_stats(b, a)
        assert r1.mean_deg == pytest.approx(r2.mean_deg, rel=1e-12)

    def test_clamps_fp_overshoot(self):
        v = np.array([[0.6, 0.0, -0.8]])
        normal_error_stats(v, v)  # dot may exceed 1 by an ulp; must not raise

    def test_normal_map_inputs_compare_common_support(self):
        vec = np.zeros((3, 3, 3))
        vec[1, 1] = [0.0, 0.0, -1.0]
        mask = np.zeros((3, 3), dtype=bool)
        mask[1, 1] = True
        nm = NormalMap(vectors=vec, defined=mask)
        rep = normal_error_stats(nm, nm)
        assert rep.mean_deg == 0.0

    def test_empty_comparison_rejected(self):
        vec = np.zeros((3, 3, 3))
        mask = np.zeros((3, 3), dtype=bool)
        nm = NormalMap(vectors=vec, defined=mask)
        with pytest.raises(ValueError):
            normal_error_stats(nm, nm)
