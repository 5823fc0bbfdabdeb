import json
import math
import os

import pytest
import torch

from unhaze.data import load_image, save_image
from unhaze.errors import IngestionError, InputError
from unhaze.metrics import PSNR_SENTINEL, evaluate_dirs, psnr, ssim

GOLDEN = os.path.join(os.path.dirname(__file__), "data", "golden")


def noisy_pair(size=24, amp=0.05, seed=0):
    gen = torch.Generator().manual_seed(seed)
    gt = torch.rand(1, 3, size, size, generator=gen) * 0.8 + 0.1
    pred = (gt + amp * torch.randn(gt.shape, generator=gen)).clamp(0, 1)
    return pred, gt


class TestPsnr:

    def test_identical_images_hit_sentinel(self):
        x = torch.rand(1, 3, 8, 8, generator=torch.Generator().manual_seed(0))
        assert psnr(x, x.clone()) == PSNR_SENTINEL

    def test_one_level_constant_offset(self):
        # uniform 1/255 error against unit range
        gt = torch.full((1, 3, 16, 16), 100 / 255)
        pred = torch.full((1, 3, 16, 16), 101 / 255)
        want = 20 * math.log10(255)
        assert psnr(pred, gt) == pytest.approx(want, abs=1e-3)

    def test_full_range_error_is_zero_db(self):
        gt = torch.ones(1, 3, 8, 8)
        pred = torch.zeros(1, 3, 8, 8)
        assert psnr(pred, gt) == pytest.approx(0.0, abs=1e-12)

    def test_decreases_with_noise_amplitude(self):
        vals = [psnr(*noisy_pair(amp=a, seed=1)) for a in (0.01, 0.05, 0.2)]
        assert vals[0] > vals[1] > vals[2]

    def test_custom_data_range(self):
        gt = torch.zeros(1, 3, 8, 8)
        pred = torch.full((1, 3, 8, 8), 25.5)
        assert psnr(pred, gt, data_range=255.0) == pytest.approx(20.0, rel=1e-9)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(InputError):
            psnr(torch.zeros(1, 3, 8, 8), torch.zeros(1, 3, 8, 9))


class TestSsim:

    def test_self_similarity_is_one(self):
        x = torch.rand(1, 3, 16, 16, generator=torch.Generator().manual_seed(2))
        assert ssim(x, x.clone()) == 1.0

    def test_symmetry(self):
        pred, gt = noisy_pair(seed=3)
        assert abs(ssim(pred, gt) - ssim(gt, pred)) < 1e-9

    def test_constant_images_closed_form(self):
        # zero variance leaves only the luminance factor
        m1, m2 = 0.25, 0.75
        a = torch.full((1, 3, 16, 16), m1)
        b = torch.full((1, 3, 16, 16), m2)
        c1 = 0.01 ** 2
        want = (2 * m1 * m2 + c1) / (m1 * m1 + m2 * m2 + c1)
        assert ssim(a, b) == pytest.approx(want, rel=1e-9)

    def test_decreases_with_noise_amplitude(self):
        vals = [ssim(*noisy_pair(amp=a, seed=4)) for a in (0.01, 0.05, 0.2)]
        assert vals[0] > vals[1] > vals[2]

    def test_joint_shift_nearly_invariant(self):
        pred, gt = noisy_pair(seed=5)
        base = ssim(pred, gt)
        shifted = ssim(pred + 0.02, gt + 0.02)
        assert abs(base - shifted) < 1e-3

    def test_small_image_rejected(self):
        with pytest.raises(InputError):
            ssim(torch.zeros(1, 3, 10, 10), torch.zeros(1, 3, 10, 10))

    def test_shape_and_rank_checks(self):
        with pytest.raises(InputError):
            ssim(torch.zeros(1, 3, 16, 16), torch.zeros(1, 3, 16, 17))
        with pytest.raises(InputError):
            ssim(torch.zeros(3, 16, 16), torch.zeros(3, 16, 16))

    def test_bounded_above_by_one(self):
        for seed in range(5):
            pred, gt = noisy_pair(seed=seed, amp=0.02)
            assert ssim(pred, gt) <= 1.0


class TestEvaluateDirs:

    def fill(self, root, names, seed=0, size=16):
        os.makedirs(root, exist_ok=True)
        gen = torch.Generator().manual_seed(seed)
        for n in names:
            save_image(torch.rand(1, 3, size, size, generator=gen),
                       os.path.join(root, n))

    def test_identity_directories(self, tmp_path):
        self.fill(tmp_path / "gt", ["1.png", "2.png"], seed=1)
        report = evaluate_dirs(str(tmp_path / "gt"), str(tmp_path / "gt"))
        assert report.mean_psnr == PSNR_SENTINEL
        assert report.mean_ssim == pytest.approx(1.0, abs=1e-12)
        assert [r["id"] for r in report.per_image] == ["1", "2"]

    def test_means_match_per_image_rows(self, tmp_path):
        self.fill(tmp_path / "pred", ["1.png", "2.png", "3.png"], seed=2)
        self.fill(tmp_path / "gt", ["1.png", "2.png", "3.png"], seed=3)
        report = evaluate_dirs(str(tmp_path / "pred"), str(tmp_path / "gt"))
        assert report.mean_psnr == pytest.approx(
            sum(r["psnr"] for r in report.per_image) / 3, abs=1e-9)
        assert report.mean_ssim == pytest.approx(
            sum(r["ssim"] for r in report.per_image) / 3, abs=1e-9)

    def test_report_file_written(self, tmp_path):
        self.fill(tmp_path / "pred", ["1.png"], seed=4)
        self.fill(tmp_path / "gt", ["1.png"], seed=5)
        out = tmp_path / "report.json"
        report = evaluate_dirs(str(tmp_path / "pred"), str(tmp_path / "gt"),
                               report_path=str(out))
        doc = json.loads(out.read_text())
        assert doc == report.to_dict()

    def test_mismatched_filenames_rejected(self, tmp_path):
        self.fill(tmp_path / "pred", ["1.png", "extra.png"])
        self.fill(tmp_path / "gt", ["1.png"])
        with pytest.raises(IngestionError, match="extra.png"):
            evaluate_dirs(str(tmp_path / "pred"), str(tmp_path / "gt"))

    def test_empty_directories_rejected(self, tmp_path):
        (tmp_path / "pred").mkdir()
        (tmp_path / "gt").mkdir()
        with pytest.raises(IngestionError):
            evaluate_dirs(str(tmp_path / "pred"), str(tmp_path / "gt"))

    def test_size_mismatch_names_file(self, tmp_path):
        self.fill(tmp_path / "pred", ["1.png"], size=16)
        self.fill(tmp_path / "gt", ["1.png"], size=24)
        with pytest.raises(InputError, match="1.png"):
            evaluate_dirs(str(tmp_path / "pred"), str(tmp_path / "gt"))


class TestGoldenRegression:
    """Frozen values computed once from the checked-in PNGs."""

    def test_values_match_frozen_file(self):
        frozen = json.loads(open(os.path.join(GOLDEN, "metrics.json")).read())
        for row in frozen["per_image"]:
            pred = load_image(os.path.join(GOLDEN, "pred", row["file"]))
            gt = load_image(os.path.join(GOLDEN, "gt", row["file"]))
            assert psnr(pred, gt) == pytest.approx(row["psnr"], abs=1e-6)
            assert ssim(pred, gt) == pytest.approx(row["ssim"], abs=1e-6)

    def test_evaluate_dirs_agrees_with_frozen_means(self):
        report = evaluate_dirs(os.path.join(GOLDEN, "pred"),
                               os.path.join(GOLDEN, "gt"))
        frozen = json.loads(open(os.path.join(GOLDEN, "metrics.json")).read())
        assert report.mean_psnr == pytest.approx(frozen["mean_psnr"], abs=1e-6)
        assert report.mean_ssim == pytest.approx(frozen["mean_ssim"], abs=1e-6)
