import json
import math
import os

import numpy as np
import pytest

from looptopo.data import (TEST, TRAIN, VAL, SamplingConfig, Dataset,
                           apply_standardization, fit_standardization,
                           generate_dataset, internal_intervals,
                           invert_standardization, load_dataset,
                           sample_params, sample_params_external, save_dataset)
from looptopo.diagnostics import Diagnostics
from looptopo.errors import (ChecksumError, FormatVersionError,
                             ValidationError)
from looptopo.forward_model import vis_to_reals, visibilities_closed_form_batch

PI = math.pi

ARRAY_FIELDS = ("params_disk", "params", "clean", "noisy", "split")


def small_cfg(scenario, seed=5, **kw):
    sizes = dict(n_train=120, n_val=40, n_test=40)
    sizes.update(kw)
    return SamplingConfig.default(scenario, seed, **sizes)


def datasets_equal(a: Dataset, b: Dataset):
    return all(np.array_equal(getattr(a, f), getattr(b, f)) for f in ARRAY_FIELDS)


class TestSampling:
    def test_simple_pins(self):
        rng = np.random.default_rng(0)
        cfg = small_cfg("simple")
        for _ in range(50):
            p = sample_params(cfg, rng)
            assert p[0] == 0 and p[1] == 0 and p[2] == 1000 and p[3] == 8 and p[4] == 5
            assert 0 <= p[5] < PI
            assert -0.05 <= p[6] <= 0.05

    def test_all_circular_when_fraction_is_one(self):
        # circular_fraction < 1 by contract; 1 - eps gives all-circular draws
        rng = np.random.default_rng(1)
        cfg = SamplingConfig.default("complete", 3, n_train=50, n_val=10, n_test=10,
                                     circular_fraction=1.0 - 1e-12)
        for _ in range(50):
            p = sample_params(cfg, rng)
            assert p[4] == 0.0 and p[5] == 0.0 and p[6] == 0.0

    def test_alpha_uniformity_ks(self):
        # Kolmogorov-Smirnov distance of 1e5 draws from U[0, 180)
        rng = np.random.default_rng(2)
        cfg = small_cfg("simple")
        draws = np.sort([sample_params_external(cfg, rng)[5] for _ in range(100000)])
        ecdf_hi = np.arange(1, draws.size + 1) / draws.size
        ecdf_lo = np.arange(0, draws.size) / draws.size
        cdf = draws / 180.0
        ks = max(np.max(np.abs(ecdf_hi - cdf)), np.max(np.abs(ecdf_lo - cdf)))
        assert ks < 0.01

    def test_interval_overrides(self):
        cfg = SamplingConfig.default("complete", 1, intervals={"flux": (900, 1100)})
        assert cfg.resolved_intervals()["flux"] == (900, 1100)
        with pytest.raises(ValidationError):
            SamplingConfig.default("complete", 1, intervals={"bogus": (0, 1)})

    def test_reversed_interval_rejected(self):
        with pytest.raises(ValidationError):
            SamplingConfig.default("complete", 1, intervals={"flux": (2000, 1000)})

    def test_circle_noise_rejected(self):
        with pytest.raises(ValidationError):
            SamplingConfig.default("circle", 1, noise=True)

    def test_internal_intervals_converts_angles(self):
        iv = internal_intervals(small_cfg("simple"))
        assert iv["alpha"] == (0.0, PI)


class TestGeneration:
    def test_split_sizes_and_partition(self):
        ds = generate_dataset(small_cfg("simple"))
        assert ds.n_samples == 200
        assert (ds.split == TRAIN).sum() == 120
        assert (ds.split == VAL).sum() == 40
        assert (ds.split == TEST).sum() == 40
        assert np.all(np.isin(ds.split, [TRAIN, VAL, TEST]))

    def test_determinism(self):
        cfg = small_cfg("complete")
        assert datasets_equal(generate_dataset(cfg), generate_dataset(cfg))

    def test_jobs_do_not_change_content(self):
        cfg = small_cfg("complete")
        assert datasets_equal(generate_dataset(cfg), generate_dataset(cfg, jobs=2))

    def test_clean_channel_reproducible_from_params(self):
        ds = generate_dataset(small_cfg("complete"))
        vis = visibilities_closed_form_batch(ds.params, ds.frequencies, ds.build)
        np.testing.assert_allclose(vis_to_reals(vis), ds.clean,
                                   atol=1e-9 * np.abs(ds.clean).max())

    def test_noise_statistics(self):
        # pinned flux makes the target std exactly 2 sqrt(1000)
        cfg = SamplingConfig.default("complete", 77, n_train=1200, n_val=150,
                                     n_test=150, intervals={"flux": (1000, 1000)})
        ds = generate_dataset(cfg)
        resid = (ds.noisy - ds.clean).ravel()
        target = 2 * math.sqrt(1000)
        assert abs(resid.std() - target) / target < 0.02
        assert abs(resid.mean()) < 1.0

    def test_simple_scenario_is_noise_free(self):
        ds = generate_dataset(small_cfg("simple"))
        np.testing.assert_array_equal(ds.clean, ds.noisy)

    def test_circle_scenario(self):
        ds = generate_dataset(small_cfg("circle"))
        assert ds.clean.shape == (200, 2)
        np.testing.assert_allclose(ds.clean[:, 0], np.cos(ds.params[:, 0]), atol=1e-12)
        assert ds.frequencies is None

    def test_circular_fraction_hits_degenerate_branch(self):
        cfg = SamplingConfig.default("complete", 5, n_train=400, n_val=50, n_test=50,
                                     circular_fraction=0.25)
        ds = generate_dataset(cfg)
        circular = ds.params[:, 4] == 0.0
        assert 0.15 < circular.mean() < 0.35
        assert np.all(ds.params[circular][:, 5:7] == 0.0)


class TestStandardization:
    def test_train_split_statistics(self):
        ds = generate_dataset(small_cfg("simple"))
        stats = fit_standardization(ds)
        z = apply_standardization(stats, ds.inputs(TRAIN))
        assert np.abs(z.mean(axis=0)).max() < 1e-9
        assert np.abs(z.std(axis=0) - 1).max() < 1e-6

    def test_constant_feature_handled(self):
        ds = generate_dataset(small_cfg("circle"))
        ds.noisy = ds.noisy.copy()
        ds.noisy[:, 1] = 4.2
        diag = Diagnostics()
        stats = fit_standardization(ds, diag=diag)
        assert stats.std[1] == 1.0
        assert diag.count("zero_variance_feature") == 1
        z = apply_standardization(stats, ds.inputs(TRAIN))
        np.testing.assert_array_equal(z[:, 1], 0.0)

    def test_invertible(self):
        ds = generate_dataset(small_cfg("simple"))
        stats = fit_standardization(ds)
        x = ds.inputs(TEST)
        back = invert_standardization(stats, apply_standardization(stats, x))
        np.testing.assert_allclose(back, x, atol=1e-12 * np.abs(x).max())

    def test_uses_training_split_only(self):
        ds = generate_dataset(small_cfg("simple"))
        stats = fit_standardization(ds)
        full_mean = ds.noisy.mean(axis=0)
        assert not np.allclose(stats.mean, full_mean, atol=1e-12)


class TestDiskFormat:
    @pytest.mark.parametrize("text", [False, True])
    def test_round_trip_identity(self, tmp_path, text):
        for scenario in ("circle", "simple", "complete"):
            ds = generate_dataset(small_cfg(scenario))
            path = tmp_path / f"{scenario}_{text}"
            save_dataset(ds, path, text=text)
            assert datasets_equal(ds, load_dataset(path))

    def test_corrupted_byte_detected(self, tmp_path):
        ds = generate_dataset(small_cfg("simple"))
        save_dataset(ds, tmp_path / "ds")
        target = tmp_path / "ds" / "clean.bin"
        blob = bytearray(target.read_bytes())
        blob[100] ^= 0xFF
        target.write_bytes(bytes(blob))
        with pytest.raises(ChecksumError):
            load_dataset(tmp_path / "ds")

    def test_truncated_file_detected(self, tmp_path):
        ds = generate_dataset(small_cfg("simple"))
        save_dataset(ds, tmp_path / "ds")
        target = tmp_path / "ds" / "params.bin"
        target.write_bytes(target.read_bytes()[:64])
        with pytest.raises(ChecksumError):
            load_dataset(tmp_path / "ds")

    def test_future_version_rejected(self, tmp_path):
        ds = generate_dataset(small_cfg("simple"))
        save_dataset(ds, tmp_path / "ds")
        manifest_path = tmp_path / "ds" / "manifest.json"
        manifest = json.loads(manifest_path.read_text())
        manifest["format_version"] = 999
        manifest_path.write_text(json.dumps(manifest))
        with pytest.raises(FormatVersionError):
            load_dataset(tmp_path / "ds")

    def test_angles_stored_in_degrees(self, tmp_path):
        ds = generate_dataset(small_cfg("simple"))
        save_dataset(ds, tmp_path / "ds")
        manifest = json.loads((tmp_path / "ds" / "manifest.json").read_text())
        assert manifest["angle_unit_on_disk"] == "degrees"
        raw = np.frombuffer((tmp_path / "ds" / "params.bin").read_bytes(),
                            dtype="<f8").reshape(-1, 7)
        assert raw[:, 5].max() > PI  # degrees, not radians
        np.testing.assert_allclose(np.radians(raw[:, 5]), ds.params[:, 5])

    def test_save_is_deterministic(self, tmp_path):
        cfg = small_cfg("simple")
        for name in ("a", "b"):
            save_dataset(generate_dataset(cfg), tmp_path / name)
        for fname in os.listdir(tmp_path / "a"):
            assert (tmp_path / "a" / fname).read_bytes() == \
                   (tmp_path / "b" / fname).read_bytes()


class TestConfigValidation:
    def test_negative_split_rejected(self):
        with pytest.raises(ValidationError):
            SamplingConfig.default("simple", 1, n_train=-1)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValidationError):
            SamplingConfig.default("simple", 1, n_train=0, n_val=0, n_test=0)

    def test_unknown_scenario_rejected(self):
        with pytest.raises(ValidationError):
            SamplingConfig.default("ellipse", 1)

    def test_dict_round_trip(self):
        cfg = small_cfg("complete")
        assert SamplingConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()
