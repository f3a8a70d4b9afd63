import math

import numpy as np
import pytest

from gscomm.channel import CODECS, ChannelConfig
from gscomm.checkpoint import load_params, params_checksum, save_params
from gscomm.classifier import ClassifierModel
from gscomm.datasets import (
    STL10_IMAGE_BYTES,
    load_stl10_binary,
    make_synthetic_example,
    read_ppm,
    synthetic_dataset,
    write_ppm,
)
from gscomm.distill import DistillConfig, MaskingNetwork
from gscomm.errors import DatasetFormatError, UndefinedMetricError
from gscomm.masking import apply_mask, mask_from_array
from gscomm.metrics import masked_psnr
from gscomm.pipeline import (
    PipelineModels,
    RefineParams,
    report_csv,
    run_end_to_end,
    sweep,
)
from gscomm.ssae import SSAE, SSAEConfig
from gscomm.vit import ViTConfig


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


class TestSyntheticDataset:
    def test_shapes_and_labels(self):
        data = synthetic_dataset(4, 3, 32, seed=0)
        assert len(data) == 12
        assert sorted({ex.label for ex in data}) == [0, 1, 2, 3]
        for ex in data:
            assert ex.image.shape == (3, 32, 32)
            assert ex.fg_mask.shape == (32, 32)
            assert 0.0 <= ex.image.min() and ex.image.max() <= 1.0
            assert ex.fg_mask.sum() > 0

    def test_deterministic(self):
        a = synthetic_dataset(2, 2, 16, seed=7)
        b = synthetic_dataset(2, 2, 16, seed=7)
        for xa, xb in zip(a, b):
            assert np.array_equal(xa.image, xb.image)
            assert np.array_equal(xa.fg_mask, xb.fg_mask)

    def test_foreground_not_flat(self):
        # gradient shading means masked pixels are not a constant
        ex = make_synthetic_example(0, 32, np.random.default_rng(3))
        fg = ex.image[:, ex.fg_mask > 0]
        assert fg.std() > 0.01


class TestStl10Binary:
    def test_roundtrip_layout(self, tmp_path):
        rng = np.random.default_rng(0)
        raw = rng.integers(0, 256, size=2 * STL10_IMAGE_BYTES, dtype=np.uint8)
        p = tmp_path / "imgs.bin"
        p.write_bytes(raw.tobytes())
        images = load_stl10_binary(p)
        assert len(images) == 2
        assert images[0].shape == (3, 96, 96)
        # channel-major, column-major planes: byte k of image 0 is
        # channel k // (96*96), column (k % 9216) // 96, row k % 96.
        plane = raw[:9216].reshape(96, 96)  # (col, row)
        assert np.allclose(images[0][0], plane.T / 255.0)

    def test_trailing_bytes_error(self, tmp_path):
        p = tmp_path / "bad.bin"
        p.write_bytes(b"\x00" * (STL10_IMAGE_BYTES + 5))
        with pytest.raises(DatasetFormatError) as exc:
            load_stl10_binary(p)
        assert exc.value.offset == STL10_IMAGE_BYTES

    def test_limit(self, tmp_path):
        p = tmp_path / "three.bin"
        p.write_bytes(b"\x10" * (3 * STL10_IMAGE_BYTES))
        assert len(load_stl10_binary(p, limit=2)) == 2


class TestPpm:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        image = rng.integers(0, 256, size=(3, 5, 7)).astype(np.float64) / 255.0
        p = tmp_path / "x.ppm"
        write_ppm(p, image)
        back = read_ppm(p)
        assert back.shape == (3, 5, 7)
        assert np.allclose(back, image)

    def test_comments_and_whitespace(self, tmp_path):
        p = tmp_path / "c.ppm"
        p.write_bytes(b"P6 # hello\n# another comment\n2 1\n255\n" + bytes(6))
        image = read_ppm(p)
        assert image.shape == (3, 1, 2)
        assert np.all(image == 0)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.ppm"
        p.write_bytes(b"P5\n2 2\n255\n" + bytes(4))
        with pytest.raises(DatasetFormatError):
            read_ppm(p)


# ---------------------------------------------------------------------------
# masked PSNR
# ---------------------------------------------------------------------------


def psnr_oracle(original, reconstructed, mask):
    """Brute-force double loop over pixels; peak value 1."""
    num = 0.0
    cnt = 0
    _, h, w = original.shape
    for i in range(h):
        for j in range(w):
            if mask[i, j]:
                cnt += 1
                for c in range(3):
                    num += (original[c, i, j] - reconstructed[c, i, j]) ** 2
    mse = num / (3 * cnt)
    return math.inf if mse == 0 else 10 * math.log10(1.0 / mse)


class TestMaskedPsnr:
    def test_matches_oracle(self, rng):
        for _ in range(25):
            a = rng.random((3, 6, 8))
            b = rng.random((3, 6, 8))
            m = (rng.random((6, 8)) < 0.6).astype(np.float64)
            if m.sum() == 0:
                m[0, 0] = 1.0
            got = masked_psnr(a, b, m)
            want = psnr_oracle(a, b, m)
            assert abs(got - want) <= 1e-9 * max(1.0, abs(want))

    def test_exact_match_infinite(self, rng):
        a = rng.random((3, 4, 4))
        assert masked_psnr(a, a.copy(), np.ones((4, 4))) == math.inf

    def test_known_value(self):
        a = np.zeros((3, 2, 2))
        b = np.full((3, 2, 2), 0.01)
        assert abs(masked_psnr(a, b, np.ones((2, 2))) - 40.0) < 1e-9

    def test_zero_mask_undefined(self, rng):
        with pytest.raises(UndefinedMetricError):
            masked_psnr(rng.random((3, 4, 4)), rng.random((3, 4, 4)), np.zeros((4, 4)))

    def test_accepts_semantic_mask(self, rng):
        a = rng.random((3, 4, 4))
        b = rng.random((3, 4, 4))
        m = mask_from_array(np.ones((4, 4)))
        assert masked_psnr(a, b, m) == pytest.approx(masked_psnr(a, b, np.ones((4, 4))))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


class TestCheckpoint:
    def test_roundtrip_and_checksum(self, tmp_path, rng):
        vit = ViTConfig(patch_size=8, dim=16, blocks=1, heads=2, img_h=16, img_w=16)
        net = MaskingNetwork(vit, DistillConfig(proj_dim=8), rng=np.random.default_rng(0))
        path = tmp_path / "net.ckpt"
        save_params(path, net.params)
        other = MaskingNetwork(vit, DistillConfig(proj_dim=8), rng=np.random.default_rng(9))
        load_params(path, other.params)
        for k in net.params:
            assert np.allclose(
                other.params[k].value.data, net.params[k].value.data, atol=1e-6
            )
        assert params_checksum(other.params) == pytest.approx(
            params_checksum(net.params), rel=1e-6
        )


# ---------------------------------------------------------------------------
# end-to-end
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_models():
    vit = ViTConfig(patch_size=8, dim=16, blocks=1, heads=2, img_h=32, img_w=32)
    masker = MaskingNetwork(vit, DistillConfig(proj_dim=8), rng=np.random.default_rng(0))
    ssae = SSAE(SSAEConfig(latent_channels=4, downs=2, bits=8, stem_channels=8),
                rng=np.random.default_rng(1))
    clf = ClassifierModel(vit, num_classes=2, rng=np.random.default_rng(2))
    return PipelineModels(masker=masker, ssae=ssae, classifier=clf)


class TestRunEndToEnd:
    def test_noiseless_matches_local_decode(self, small_models, rng):
        image = rng.random((3, 32, 32))
        channel = ChannelConfig(mode="bsc_ber", ber=0.0, seed=0)
        refine = RefineParams()
        recon, pred, row = run_end_to_end(image, small_models, refine, channel, seed=5)
        assert row.failure == ""
        assert row.measured_ber == 0.0
        assert pred is not None and pred.probs.shape == (2,)

        # reproduce the receiver output locally without a channel
        mask = small_models.masker.semantic_mask(image)
        masked = apply_mask(image, mask)
        _, q = small_models.ssae.encode_quantize(masked)
        local = small_models.ssae.decode(q)
        from gscomm.ssae import apply_refinement, plan_refinement

        plan = plan_refinement(masked, local, mask, refine.psi, refine.eta,
                               refine.palette_size, refine.run_bits, seed=5)
        expected = apply_refinement(local, plan)
        assert np.array_equal(recon, expected)

    def test_deterministic(self, small_models, rng):
        image = rng.random((3, 32, 32))
        channel = ChannelConfig(mode="bsc_ber", ber=0.02, seed=3)
        refine = RefineParams()
        a = run_end_to_end(image, small_models, refine, channel, label=1, seed=11)
        b = run_end_to_end(image, small_models, refine, channel, label=1, seed=11)
        assert a[2] == b[2]
        if a[0] is not None:
            assert np.array_equal(a[0], b[0])

    def test_heavy_noise_reports_failure_or_degrades(self, small_models, rng):
        image = rng.random((3, 32, 32))
        channel = ChannelConfig(mode="bsc_ber", ber=0.4, seed=1)
        _, _, row = run_end_to_end(image, small_models, RefineParams(), channel, seed=2)
        assert row.measured_ber > 0.3
        assert row.failure != "" or row.masked_psnr_db < 30

    def test_awgn_path(self, small_models, rng):
        image = rng.random((3, 32, 32))
        channel = ChannelConfig(mode="awgn_snr_db", snr_db=10.0, seed=4)
        _, _, row = run_end_to_end(image, small_models, RefineParams(), channel, seed=6)
        assert row.payload_bits % 8 == 0

    def test_fec_repetition(self, small_models, rng):
        image = rng.random((3, 32, 32))
        models = PipelineModels(
            masker=small_models.masker, ssae=small_models.ssae,
            classifier=small_models.classifier, fec=CODECS["repetition3"],
        )
        channel = ChannelConfig(mode="bsc_ber", ber=0.01, seed=9)
        _, _, row = run_end_to_end(image, models, RefineParams(), channel, seed=7)
        # residual BER after majority vote at p=0.01 is ~3e-4
        assert row.measured_ber < 0.005


class TestReportAndSweep:
    def test_report_csv_schema(self, small_models, rng):
        image = rng.random((3, 32, 32))
        channel = ChannelConfig(mode="bsc_ber", ber=0.0, seed=0)
        _, _, row = run_end_to_end(image, small_models, RefineParams(), channel, seed=0)
        csv = report_csv([row])
        lines = csv.strip().split("\n")
        assert lines[0].startswith("payload_bits,measured_ber")
        assert len(lines) == 2
        assert len(lines[1].split(",")) == len(lines[0].split(","))

    def test_sweep_rows_and_determinism(self, small_models, rng):
        examples = [(rng.random((3, 32, 32)), i % 2) for i in range(2)]
        grid = [0.0, 0.01]
        rows_a, csv_a = sweep(examples, grid, small_models, RefineParams(),
                              replicates=2, base_seed=42)
        rows_b, csv_b = sweep(examples, grid, small_models, RefineParams(),
                              replicates=2, base_seed=42)
        assert len(rows_a) == 4
        assert csv_a == csv_b
        zero = [r for r in rows_a if r["grid_value"] == 0.0]
        assert all(r["failures"] == 0 for r in zero)

    def test_empty_grid(self, small_models):
        with pytest.raises(ValueError):
            sweep([], [], small_models, RefineParams())
