"""Metrics against brute-force oracles and exact identical-image sentinels."""

import math

import numpy as np
import pytest

from lucentvision.imaging import ImageBuffer, encode_png
from lucentvision.metrics import (
    MetricReport,
    PairResult,
    evaluate_pairs,
    gaussian_window,
    mad,
    psnr,
    ssim,
)


def oracle_psnr(a, b):
    diff = a.astype(np.float64) - b.astype(np.float64)
    mse = 0.0
    for v in diff.ravel():
        mse += v * v
    mse /= diff.size
    return float("inf") if mse == 0 else 10.0 * math.log10(255.0**2 / mse)


def oracle_mad(a, b):
    total = 0.0
    for x, y in zip(a.ravel(), b.ravel()):
        total += abs(float(x) - float(y))
    return total / a.size


def oracle_ssim(a, b):
    """Literal windowed SSIM on BT.601 luma, valid positions only."""

    def luma(img):
        f = img.astype(np.float64)
        return 0.299 * f[:, :, 0] + 0.587 * f[:, :, 1] + 0.114 * f[:, :, 2]

    ya, yb = luma(a), luma(b)
    win = gaussian_window()
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    h, w = ya.shape
    vals = []
    for i in range(h - 10):
        for j in range(w - 10):
            pa = ya[i : i + 11, j : j + 11]
            pb = yb[i : i + 11, j : j + 11]
            mu_a = (win * pa).sum()
            mu_b = (win * pb).sum()
            var_a = (win * pa * pa).sum() - mu_a**2
            var_b = (win * pb * pb).sum() - mu_b**2
            cov = (win * pa * pb).sum() - mu_a * mu_b
            vals.append(
                ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
            )
    return float(np.mean(vals))


def fixture_pair(seed=3, h=16, w=16):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    b = np.clip(a.astype(int) + rng.integers(-30, 31, size=a.shape), 0, 255).astype(np.uint8)
    return a, b


class TestPsnr:
    def test_matches_oracle_on_fixtures(self):
        for seed in (3, 5, 11):
            a, b = fixture_pair(seed)
            assert psnr(a, b) == pytest.approx(oracle_psnr(a, b), abs=1e-9)

    def test_identical_images_inf(self):
        a, _ = fixture_pair()
        assert psnr(a, a.copy()) == float("inf")

    def test_single_gray_level_difference_hand_value(self):
        a = np.zeros((4, 4, 3), dtype=np.uint8)
        b = np.full((4, 4, 3), 10, dtype=np.uint8)
        assert psnr(a, b) == pytest.approx(10 * math.log10(255**2 / 100), rel=1e-12)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError, match="dimensions differ"):
            psnr(np.zeros((4, 4, 3), dtype=np.uint8), np.zeros((4, 5, 3), dtype=np.uint8))


class TestMad:
    def test_matches_oracle_on_fixtures(self):
        for seed in (7, 13):
            a, b = fixture_pair(seed)
            assert mad(a, b) == pytest.approx(oracle_mad(a, b), abs=1e-9)

    def test_identical_images_zero(self):
        a, _ = fixture_pair()
        assert mad(a, a.copy()) == 0.0

    def test_hand_value(self):
        a = np.zeros((2, 2, 3), dtype=np.uint8)
        b = np.full((2, 2, 3), 7, dtype=np.uint8)
        assert mad(a, b) == 7.0


class TestSsim:
    def test_matches_oracle_on_fixtures(self):
        for seed in (3, 17):
            a, b = fixture_pair(seed)
            assert ssim(a, b) == pytest.approx(oracle_ssim(a, b), abs=1e-9)

    def test_identical_images_exactly_one(self):
        a, _ = fixture_pair(23)
        assert ssim(a, a.copy()) == 1.0

    def test_window_weights_normalized(self):
        win = gaussian_window()
        assert win.shape == (11, 11)
        assert win.sum() == pytest.approx(1.0, abs=1e-15)
        assert win[5, 5] == win.max()
        assert np.array_equal(win, win.T)

    def test_image_smaller_than_window_rejected(self):
        tiny = np.zeros((8, 8, 3), dtype=np.uint8)
        with pytest.raises(ValueError, match="smaller than"):
            ssim(tiny, tiny)

    def test_contrast_change_scores_below_one(self):
        a, _ = fixture_pair(29)
        dimmed = (a.astype(np.float64) * 0.5).astype(np.uint8)
        assert ssim(a, dimmed) < 0.99


class TestEvaluatePairs:
    def write(self, directory, name, pixels):
        directory.mkdir(exist_ok=True)
        (directory / name).write_bytes(
            encode_png(ImageBuffer(width=pixels.shape[1], height=pixels.shape[0], data=pixels))
        )

    def test_pairs_matched_by_name(self, tmp_path):
        a, b = fixture_pair(31)
        enh, ref = tmp_path / "enh", tmp_path / "ref"
        self.write(enh, "one.png", a)
        self.write(ref, "one.png", b)
        self.write(enh, "two.png", a)
        self.write(ref, "two.png", a)
        report = evaluate_pairs(enh, ref)
        assert [r.name for r in report.rows] == ["one.png", "two.png"]
        assert report.rows[0].psnr_db == pytest.approx(psnr(a, b))
        assert report.rows[1].psnr_db == float("inf")
        assert report.rows[1].ssim == 1.0
        assert report.rows[1].mad == 0.0
        assert report.warnings == []

    def test_unmatched_files_become_warnings(self, tmp_path):
        a, _ = fixture_pair(37)
        enh, ref = tmp_path / "enh", tmp_path / "ref"
        self.write(enh, "both.png", a)
        self.write(ref, "both.png", a)
        self.write(enh, "only_enh.png", a)
        self.write(ref, "only_ref.png", a)
        report = evaluate_pairs(enh, ref)
        assert [r.name for r in report.rows] == ["both.png"]
        assert any("only_enh.png" in w for w in report.warnings)
        assert any("only_ref.png" in w for w in report.warnings)

    def test_csv_format(self, tmp_path):
        a, b = fixture_pair(41)
        enh, ref = tmp_path / "enh", tmp_path / "ref"
        self.write(enh, "x.png", a)
        self.write(ref, "x.png", b)
        csv = evaluate_pairs(enh, ref).to_csv()
        lines = csv.strip().split("\n")
        assert lines[0] == "name,psnr_db,ssim,mad"
        assert lines[1].startswith("x.png,")
        assert len(lines[1].split(",")) == 4

    def test_inf_serialized_as_inf(self):
        report = MetricReport(rows=[PairResult("p.png", float("inf"), 1.0, 0.0)])
        assert "p.png,inf,1.0000,0.0000" in report.to_csv()
        assert "inf" in report.format_table()

    def test_table_includes_mean_row(self, tmp_path):
        a, b = fixture_pair(43)
        enh, ref = tmp_path / "enh", tmp_path / "ref"
        self.write(enh, "m.png", a)
        self.write(ref, "m.png", b)
        table = evaluate_pairs(enh, ref).format_table()
        assert "mean" in table
        assert "psnr_db" in table
