import math

import numpy as np
import pytest
from conftest import make_traj
from hypothesis import given
from hypothesis import strategies as st
from oracles import normalized_score as ns_oracle
from oracles import pooled_std as pooled_oracle
from oracles import rel_err
from oracles import running_metric as rm_oracle

from prefsim.data import TrajectorySets
from prefsim.evaluation import (EvalError, EvalTrace, ReportRow, export_latents,
                                final_window_returns, normalized_score, pooled_std, read_report,
                                running_curve, running_metric, summarize, write_latent_table,
                                write_report)


def _trace(arr, epochs=None):
    arr = np.asarray(arr, dtype=float)
    epochs = epochs or list(range(1, arr.shape[1] + 1))
    return EvalTrace([[(e, list(ev)) for e, ev in zip(epochs, s)] for s in arr])


class TestNormalizedScore:
    def test_boundaries(self):
        assert normalized_score(10.0, 2.0, 10.0) == 100
        assert normalized_score(2.0, 2.0, 10.0) == 0
        assert normalized_score(6.0, 2.0, 10.0) == 50
        assert normalized_score(20.0, 2.0, 10.0) == 225

    def test_equal_refs(self):
        with pytest.raises(EvalError):
            normalized_score(1.0, 3.0, 3.0)

    def test_matches_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            ret, lo, hi = rng.normal(scale=50, size=3)
            assert rel_err(float(normalized_score(ret, lo, hi)), ns_oracle(ret, lo, hi)) <= 1e-8

    @given(st.floats(-100, 100), st.floats(-100, 100), st.floats(0.1, 10), st.floats(-10, 10))
    def test_affine_preserves_order(self, x, y, a, b):
        lo, hi = -3.0, 7.0
        s = normalized_score(np.array([a * x + b, a * y + b]), a * lo + b, a * hi + b)
        if x < y:
            assert s[0] <= s[1]
        assert s[0] == pytest.approx(float(normalized_score(x, lo, hi)), abs=1e-6)


class TestRunningMetric:
    def test_constant(self):
        curve, best = running_metric(_trace(np.full((3, 10, 4), 2.5)), 8)
        assert np.all(curve == 2.5) and best == 2.5

    def test_hand_example(self):
        curve, best = running_metric(_trace([[[1, 1], [3, 3], [5, 5]]]), 2)
        assert curve.tolist() == [2, 4] and best == 4
        epochs, _ = running_curve(_trace([[[1, 1], [3, 3], [5, 5]]], [5, 10, 15]), 2)
        assert epochs == [10, 15]

    def test_average_before_max(self):
        trace = _trace([[[1], [3], [5]], [[5], [3], [1]]])
        curve, best = running_metric(trace, 2)
        assert curve.tolist() == [3, 3] and best == 3

    def test_too_few_events(self):
        with pytest.raises(EvalError):
            running_metric(_trace(np.zeros((1, 3, 2))), 8)

    def test_trace_validation(self):
        with pytest.raises(EvalError):
            EvalTrace([[(1, [0.0])], [(2, [0.0])]])
        with pytest.raises(EvalError):
            EvalTrace([[(1, [0.0]), (2, [0.0, 1.0])]])

    def test_matches_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(120):
            S, E, n = (int(x) for x in rng.integers(1, 5, 3))
            w = int(rng.integers(1, E + 1))
            arr = rng.normal(scale=10, size=(S, E + 2, n))
            curve, best = running_metric(_trace(arr), w)
            want_curve, want_best = rm_oracle(arr.tolist(), w)
            assert rel_err(best, want_best) <= 1e-8
            assert all(rel_err(a, b) <= 1e-8 for a, b in zip(curve, want_curve))

    @given(st.integers(0, 10_000), st.integers(1, 4), st.integers(2, 6))
    def test_max_of_mean_below_mean_of_max(self, seed, S, w):
        arr = np.random.default_rng(seed).normal(size=(S, w + 5, 3))
        trace = _trace(arr)
        _, best = running_metric(trace, w)
        _, per_seed = running_curve(trace, w)
        assert best <= per_seed.max(axis=1).mean() + 1e-12

    def test_round_trip(self):
        t = _trace(np.arange(12.0).reshape(2, 3, 2))
        assert EvalTrace.from_dict(t.to_dict()) == t
        assert t.map(lambda r: 2 * r).returns().tolist() == (2 * t.returns()).tolist()


class TestPooledStd:
    def test_example(self):
        within, across, total = pooled_std([[1, 1], [3, 3]])
        assert within == 0 and across == pytest.approx(math.sqrt(2)) and total == pytest.approx(1.4142, abs=1e-4)

    def test_identical(self):
        assert pooled_std(np.full((3, 5), 7.0))[2] == 0

    @pytest.mark.parametrize("bad", [[[1, 2]], [[1], [2]]])
    def test_needs_two(self, bad):
        with pytest.raises(EvalError):
            pooled_std(bad)

    def test_matches_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(150):
            S, n = int(rng.integers(2, 6)), int(rng.integers(2, 12))
            R = rng.normal(loc=rng.normal(scale=20), scale=rng.uniform(0.1, 10), size=(S, n))
            got, want = pooled_std(R), pooled_oracle(R.tolist())
            assert all(rel_err(g, w) <= 1e-10 for g, w in zip(got, want))

    @given(st.integers(0, 10_000), st.integers(2, 5), st.integers(2, 8))
    def test_total_decomposition(self, seed, S, n):
        R = np.random.default_rng(seed).normal(size=(S, n))
        w, a, t = pooled_std(R)
        assert t ** 2 == pytest.approx(w ** 2 + a ** 2, rel=1e-12)


class TestSummary:
    def test_final_window_and_summary(self):
        arr = np.random.default_rng(0).normal(size=(3, 10, 4))
        trace = _trace(arr)
        fw = final_window_returns(trace, 8)
        assert fw.shape == (3, 32) and np.array_equal(fw, arr[:, 2:, :].reshape(3, -1))
        row = summarize(trace, 8)
        assert row["S"] == 3 and row["n"] == 4
        assert row["sigma_total"] == pytest.approx(pooled_std(fw)[2])

    def test_single_seed_sigma_nan(self):
        assert math.isnan(summarize(_trace(np.zeros((1, 8, 2))), 8)["sigma_total"])

    def test_report_files(self, tmp_path):
        rows = [ReportRow("LineHopper/script", "sara", 91.234567890123, float("nan"), 1, 10)]
        js, cs = write_report(rows, tmp_path / "report", {"k": 1})
        data = read_report(js)
        assert data["rows"][0]["mean"] == 91.2345678901 and data["rows"][0]["sigma_total"] is None
        assert cs.read_text().splitlines()[0] == "task,method,mean,sigma_total,S,n"


class TestLatentExport:
    def test_rows_and_reference(self, tiny_encoder, tmp_path):
        sets = TrajectorySets([make_traj(5, 3, 2, seed=i) for i in range(3)],
                              [make_traj(5, 3, 2, seed=10 + i, rewards=False) for i in range(2)])
        zp = tiny_encoder.trajectory_latents(sets.preferred).mean(0)
        zn = tiny_encoder.trajectory_latents(sets.non_preferred).mean(0)
        rows = export_latents(tiny_encoder, zp, zn, sets)
        body = [r for r in rows if r["category"] != "reference"]
        assert len(body) == 5
        ref = next(r for r in rows if r["id"] == "z_star_p")
        assert ref["cos_p"] == pytest.approx(1.0, abs=1e-12)
        assert body[0]["true_return"] is not None and body[-1]["true_return"] is None
        lines = write_latent_table(rows, tmp_path / "lat.csv").read_text().splitlines()
        assert len(lines) == 1 + len(rows)
        assert lines[0].split(",")[:5] == ["id", "category", "cos_p", "cos_n", "true_return"]
