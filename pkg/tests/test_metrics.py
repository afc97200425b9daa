import math

import numpy as np
import pytest

from lowfield.metrics import (
    MetricsRecord,
    SSIMParams,
    evaluate_cohort,
    mse,
    psnr,
    read_metrics_csv,
    ssim,
    write_metrics_csv,
)
from lowfield.volume import Volume
from oracles import mse_bruteforce, psnr_bruteforce, ssim_bruteforce


class TestMse:
    def test_identity(self, random_volume):
        assert mse(random_volume, random_volume) == 0.0

    def test_forced_value(self):
        a = Volume(data=np.zeros((4, 4, 4)))
        b = Volume(data=np.full((4, 4, 4), 0.1))
        assert mse(a, b) == pytest.approx(0.01)

    def test_matches_bruteforce(self, rng):
        a, b = rng.random((8, 8, 8)), rng.random((8, 8, 8))
        assert mse(a, b) == pytest.approx(mse_bruteforce(a, b), abs=1e-12)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            mse(rng.random((4, 4, 4)), rng.random((5, 4, 4)))


class TestPsnr:
    def test_identical_returns_inf_sentinel(self, random_volume):
        assert psnr(random_volume, random_volume) == math.inf

    def test_forced_value(self):
        a = np.zeros((4, 4, 4))
        b = np.full((4, 4, 4), 0.1)  # mse 0.01, max 1 -> 20 dB
        assert psnr(a, b, 1.0) == pytest.approx(20.0)

    def test_matches_bruteforce(self, rng):
        a, b = rng.random((8, 8, 8)), rng.random((8, 8, 8))
        assert psnr(a, b) == pytest.approx(psnr_bruteforce(a, b), abs=1e-9)

    def test_strictly_decreasing_in_perturbation(self, rng):
        base = rng.random((8, 8, 8))
        noise = rng.normal(size=base.shape)
        values = [psnr(base, base + eps * noise) for eps in (0.01, 0.02, 0.05, 0.1)]
        assert all(a > b for a, b in zip(values, values[1:]))


class TestSsim:
    def test_identity_is_one(self, random_volume):
        assert ssim(random_volume, random_volume) == pytest.approx(1.0, abs=1e-9)

    def test_constant_pair_closed_form(self):
        p, q = 0.2, 0.4
        a = Volume(data=np.full((12, 12, 12), p))
        b = Volume(data=np.full((12, 12, 12), q))
        c1 = (0.01 * 1.0) ** 2
        expected = (2 * p * q + c1) / (p**2 + q**2 + c1)  # variance terms vanish
        assert ssim(a, b) == pytest.approx(expected, abs=1e-9)

    def test_symmetry(self, rng):
        a, b = rng.random((10, 10, 10)), rng.random((10, 10, 10))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_matches_bruteforce_3d(self, rng):
        a, b = rng.random((8, 8, 8)), rng.random((8, 8, 8))
        assert ssim(a, b) == pytest.approx(ssim_bruteforce(a, b), abs=1e-6)

    def test_matches_bruteforce_2d_window11(self, rng):
        a, b = rng.random((16, 16)), rng.random((16, 16))
        params = SSIMParams(window=11)
        assert ssim(a, b, params) == pytest.approx(
            ssim_bruteforce(a, b, window=11), abs=1e-6
        )

    def test_in_range_on_arbitrary_inputs(self, rng):
        for _ in range(10):
            a = rng.normal(size=(8, 8, 8))
            b = rng.normal(size=(8, 8, 8))
            assert -1.0 <= ssim(a, b) <= 1.0

    def test_too_small_errors(self, rng):
        with pytest.raises(ValueError, match="window"):
            ssim(rng.random((5, 8, 8)), rng.random((5, 8, 8)))

    def test_params_invariants(self):
        with pytest.raises(ValueError):
            SSIMParams(window=4)
        with pytest.raises(ValueError):
            SSIMParams(k1=0)


class TestEvaluateCohort:
    def _cohort(self, rng, n=3):
        refs = [Volume(data=rng.random((8, 8, 8)), subject_id=f"s{i}") for i in range(n)]
        lows = [
            Volume(data=np.clip(r.data + rng.normal(0, 0.1, r.shape), 0, 1), subject_id=r.subject_id)
            for r in refs
        ]
        return lows, refs

    def test_identity_model_equals_baseline(self, rng):
        lows, refs = self._cohort(rng)
        records = evaluate_cohort(lambda v: v, lows, refs, model_name="identity")
        baseline = [r for r in records if r.model == "noisy_baseline"]
        ident = [r for r in records if r.model == "identity"]
        for b, i in zip(baseline, ident):
            assert b.ssim == i.ssim and b.psnr_db == i.psnr_db

    def test_oracle_model_perfect_scores(self, rng):
        lows, refs = self._cohort(rng)
        by_subject = {r.subject_id: r for r in refs}
        records = evaluate_cohort(
            lambda v: by_subject[v.subject_id], lows, refs, model_name="oracle"
        )
        for rec in records:
            if rec.model == "oracle":
                assert rec.ssim == pytest.approx(1.0, abs=1e-9)
                assert rec.psnr_db == math.inf

    def test_misalignment_names_subject(self, rng):
        lows, refs = self._cohort(rng)
        bad = Volume(data=rng.random((9, 8, 8)), subject_id="s1")
        lows[1] = bad
        with pytest.raises(ValueError, match="s1"):
            evaluate_cohort(None, lows, refs)

    def test_record_invariant(self):
        with pytest.raises(ValueError):
            MetricsRecord("s", "m", ssim=1.5, psnr_db=10.0)


class TestCsv:
    def test_roundtrip_with_inf_sentinel(self, tmp_path):
        records = [
            MetricsRecord("s0", "cyclegan", 0.91, 24.5),
            MetricsRecord("s1", "dae", 0.88, math.inf),
        ]
        path = tmp_path / "metrics.csv"
        write_metrics_csv(records, path)
        text = path.read_text()
        assert text.splitlines()[0] == "subject_id,model,ssim,psnr_db"
        assert "inf" in text
        assert read_metrics_csv(path) == records
