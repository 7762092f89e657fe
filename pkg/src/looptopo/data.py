"""Example-pair datasets: sampling, generation, splits, standardization, disk format.

Three scenarios share one pipeline:

  circle    angle theta on the unit circle, data (cos theta, sin theta)
  simple    only (alpha, c) free, remaining loop parameters pinned, no noise
  complete  all seven loop parameters free, visibilities perturbed with
            white Gaussian noise of std 2 sqrt(flux)

Sampling happens in external units (angles in degrees, matching config files
and disk), which are converted to internal radians exactly once. A dataset
directory is a manifest.json plus flat little-endian arrays, checksummed.
"""

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .diagnostics import Diagnostics
from .errors import FormatVersionError, ValidationError
from .forward_model import (DEFAULT_BUILD, FrequencyConfig, FrequencySet,
                      LoopBuildConfig, add_noise, default_frequencies,
                      vis_to_reals, visibilities_closed_form_batch)
from .serialization import (config_hash, read_array_bin, read_json,
                            read_matrix_csv, write_array_bin, write_json,
                            write_matrix_csv)

DATASET_FORMAT_VERSION = 1

SCENARIOS = ("circle", "simple", "complete")
TRAIN, VAL, TEST = 0, 1, 2
SPLIT_NAMES = {TRAIN: "train", VAL: "val", TEST: "test"}

#: External-unit parameter intervals (alpha in degrees). Values with a
#: degenerate interval are pinned. Complete-scenario draw ranges double as
#: the normalization intervals of the error metrics.
SIMPLE_INTERVALS = {"x_c": (0.0, 0.0), "y_c": (0.0, 0.0), "flux": (1000.0, 1000.0),
                    "sigma": (8.0, 8.0), "eps": (5.0, 5.0),
                    "alpha": (0.0, 180.0), "c": (-0.05, 0.05)}
COMPLETE_INTERVALS = {"x_c": (-50.0, 50.0), "y_c": (-50.0, 50.0),
                      "flux": (500.0, 5000.0), "sigma": (4.0, 20.0),
                      "eps": (0.0, 5.0), "alpha": (0.0, 180.0),
                      "c": (-0.05, 0.05)}
CIRCLE_INTERVAL = (0.0, 360.0)  # degrees

PARAM_ORDER = ("x_c", "y_c", "flux", "sigma", "eps", "alpha", "c")
ANGLE_COLUMNS = {"circle": [0], "simple": [5], "complete": [5]}

LOOP_PARAM_HEADER = ["x_c", "y_c", "flux", "sigma_fwhm", "eps", "alpha_deg", "c"]
CIRCLE_PARAM_HEADER = ["theta_deg"]


def default_split_sizes(scenario):
    if scenario == "simple":
        return 30000, 10000, 10000
    if scenario == "complete":
        return 60000, 20000, 20000
    return 5000, 1000, 1000


@dataclass(frozen=True)
class SamplingConfig:
    """What to draw and how much of it. Angles here are degrees."""

    scenario: str
    n_train: int
    n_val: int
    n_test: int
    seed: int
    noise: bool
    circular_fraction: float = 0.05
    intervals: dict = None

    @classmethod
    def default(cls, scenario, seed, **overrides):
        if scenario not in SCENARIOS:
            raise ValidationError(f"unknown scenario {scenario!r}")
        n_train, n_val, n_test = default_split_sizes(scenario)
        base = dict(scenario=scenario, n_train=n_train, n_val=n_val, n_test=n_test,
                    seed=seed, noise=(scenario == "complete"),
                    circular_fraction=0.05 if scenario == "complete" else 0.0,
                    intervals=None)
        base.update(overrides)
        cfg = cls(**base)
        cfg.validate()
        return cfg

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ValidationError(f"unknown scenario {self.scenario!r}")
        for name in ("n_train", "n_val", "n_test"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if self.total < 1:
            raise ValidationError("dataset must contain at least one sample")
        if not (0.0 <= self.circular_fraction < 1.0):
            raise ValidationError(
                f"circular_fraction must be in [0, 1), got {self.circular_fraction}")
        if self.scenario == "circle" and self.noise:
            raise ValidationError("the circle scenario is noise-free")
        for name, (lo, hi) in self.resolved_intervals().items():
            if lo > hi:
                raise ValidationError(f"interval for {name} is reversed: ({lo}, {hi})")

    @property
    def total(self):
        return self.n_train + self.n_val + self.n_test

    def resolved_intervals(self):
        if self.scenario == "circle":
            base = {"theta": CIRCLE_INTERVAL}
        elif self.scenario == "simple":
            base = dict(SIMPLE_INTERVALS)
        else:
            base = dict(COMPLETE_INTERVALS)
        if self.intervals:
            unknown = set(self.intervals) - set(base)
            if unknown:
                raise ValidationError(f"unknown interval names {sorted(unknown)}")
            base.update({k: tuple(v) for k, v in self.intervals.items()})
        return base

    def to_dict(self):
        return {"scenario": self.scenario, "n_train": self.n_train,
                "n_val": self.n_val, "n_test": self.n_test, "seed": self.seed,
                "noise": self.noise, "circular_fraction": self.circular_fraction,
                "intervals": {k: list(v) for k, v in self.resolved_intervals().items()}}

    @classmethod
    def from_dict(cls, d):
        cfg = cls(scenario=d["scenario"], n_train=d["n_train"], n_val=d["n_val"],
                  n_test=d["n_test"], seed=d["seed"], noise=d["noise"],
                  circular_fraction=d.get("circular_fraction", 0.0),
                  intervals=d.get("intervals"))
        cfg.validate()
        return cfg


def internal_intervals(cfg: SamplingConfig) -> dict:
    """Intervals in internal units (radians for angles)."""
    out = {}
    for name, (lo, hi) in cfg.resolved_intervals().items():
        if name in ("alpha", "theta"):
            out[name] = (math.radians(lo), math.radians(hi))
        else:
            out[name] = (lo, hi)
    return out


def _sample_rng(seed, index, stream):
    # stream 0: parameters, stream 1: noise; keyed per sample so generation
    # is order-independent and parallelizable
    return np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                        spawn_key=(index, stream)))


def sample_params_external(cfg: SamplingConfig, rng) -> np.ndarray:
    """One parameter draw in external units (degrees for angles)."""
    iv = cfg.resolved_intervals()
    if cfg.scenario == "circle":
        lo, hi = iv["theta"]
        return np.array([rng.uniform(lo, hi)])
    lows = np.array([iv[k][0] for k in PARAM_ORDER])
    highs = np.array([iv[k][1] for k in PARAM_ORDER])
    if cfg.scenario == "complete" and rng.random() < cfg.circular_fraction:
        draw = rng.uniform(lows[:4], highs[:4])
        return np.concatenate([draw, [0.0, 0.0, 0.0]])
    return rng.uniform(lows, highs)


def to_internal_params(scenario, ext: np.ndarray) -> np.ndarray:
    """Degrees -> radians on the angle columns; other columns unchanged."""
    arr = np.array(ext, dtype=float, copy=True)
    for col in ANGLE_COLUMNS[scenario]:
        arr[..., col] = np.radians(arr[..., col])
    return arr


def to_external_params(scenario, internal: np.ndarray) -> np.ndarray:
    arr = np.array(internal, dtype=float, copy=True)
    for col in ANGLE_COLUMNS[scenario]:
        arr[..., col] = np.degrees(arr[..., col])
    return arr


def sample_params(cfg: SamplingConfig, rng):
    """One parameter draw in internal units (radians)."""
    return to_internal_params(cfg.scenario, sample_params_external(cfg, rng))


@dataclass
class Dataset:
    """In-memory dataset; params_disk is the serialization truth (degrees)."""

    config: SamplingConfig
    params_disk: np.ndarray        # (S, P), external units
    params: np.ndarray             # (S, P), internal units (radians)
    clean: np.ndarray              # (S, M), real-coded data
    noisy: np.ndarray              # (S, M)
    split: np.ndarray              # (S,), int8 in {TRAIN, VAL, TEST}
    frequencies: FrequencySet = None
    build: LoopBuildConfig = None

    @property
    def n_samples(self):
        return self.params.shape[0]

    @property
    def data_dim(self):
        return self.clean.shape[1]

    def mask(self, split):
        return self.split == split

    def inputs(self, split=None):
        """Network inputs: the noisy channel (== clean when noise is off)."""
        if split is None:
            return self.noisy
        return self.noisy[self.mask(split)]

    def manifest_dict(self):
        d = {"format_version": DATASET_FORMAT_VERSION, "kind": "dataset",
             "config": self.config.to_dict(),
             "angle_unit_on_disk": "degrees",
             "angle_columns": ANGLE_COLUMNS[self.config.scenario]}
        d["frequencies"] = None if self.frequencies is None else self.frequencies.uv.tolist()
        d["build"] = None if self.build is None else self.build.to_dict()
        return d


def generate_dataset(cfg: SamplingConfig, freqs: FrequencySet = None,
                     build: LoopBuildConfig = None, jobs: int = 1) -> Dataset:
    """Draw parameters, run the forward model, attach splits.

    Fully determined by cfg (including the seed): every sample derives its
    own generators from (seed, index), so the result does not depend on
    evaluation order or on ``jobs``.
    """
    cfg.validate()
    total = cfg.total

    if cfg.scenario == "circle":
        ext = _draw_external(cfg, 0, total, jobs)
        params = to_internal_params(cfg.scenario, ext)
        clean = np.stack([np.cos(params[:, 0]), np.sin(params[:, 0])], axis=1)
        noisy = clean.copy()
        freqs = None
        build = None
    else:
        if freqs is None:
            freqs = default_frequencies(FrequencyConfig())
        if build is None:
            build = DEFAULT_BUILD
        ext = _draw_external(cfg, 0, total, jobs)
        params = to_internal_params(cfg.scenario, ext)
        vis = visibilities_closed_form_batch(params, freqs, build)
        clean = vis_to_reals(vis)
        if cfg.noise:
            noisy = np.empty_like(clean)
            for i in range(total):
                rng = _sample_rng(cfg.seed, i, 1)
                noisy[i] = vis_to_reals(add_noise(vis[i], params[i, 2], rng))
        else:
            noisy = clean.copy()

    split = np.empty(total, dtype=np.int8)
    split[:cfg.n_train] = TRAIN
    split[cfg.n_train:cfg.n_train + cfg.n_val] = VAL
    split[cfg.n_train + cfg.n_val:] = TEST
    return Dataset(config=cfg, params_disk=ext, params=params, clean=clean,
                   noisy=noisy, split=split, frequencies=freqs, build=build)


def _draw_chunk(cfg, lo, hi):
    rows = [sample_params_external(cfg, _sample_rng(cfg.seed, i, 0))
            for i in range(lo, hi)]
    return np.array(rows)


def _draw_external(cfg, lo, hi, jobs):
    if jobs <= 1 or hi - lo < 4 * jobs:
        return _draw_chunk(cfg, lo, hi)
    bounds = np.linspace(lo, hi, jobs + 1).astype(int)
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(_draw_chunk, [cfg] * jobs, bounds[:-1], bounds[1:]))
    return np.concatenate(parts, axis=0)


@dataclass(frozen=True)
class StandardizationStats:
    """Per-feature affine normalization fitted on the training split."""

    mean: np.ndarray
    std: np.ndarray

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(mean=np.asarray(d["mean"], dtype=float),
                   std=np.asarray(d["std"], dtype=float))


def fit_standardization(ds: Dataset, diag: Diagnostics | None = None) -> StandardizationStats:
    x = ds.inputs(TRAIN)
    if x.shape[0] == 0:
        raise ValidationError("cannot standardize: empty training split")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    # roundoff can leave a constant column with std ~ 1e-15 * |mean|
    zero = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    if np.any(zero):
        if diag is not None:
            diag.warn("zero_variance_feature",
                      f"features {np.flatnonzero(zero).tolist()} are constant; std set to 1",
                      int(zero.sum()))
        std = np.where(zero, 1.0, std)
        mean = np.where(zero, x[0], mean)  # exact center for constant columns
    return StandardizationStats(mean=mean, std=std)


def apply_standardization(stats: StandardizationStats, x):
    return (np.asarray(x, dtype=float) - stats.mean) / stats.std


def invert_standardization(stats: StandardizationStats, z):
    return np.asarray(z, dtype=float) * stats.std + stats.mean


def save_dataset(ds: Dataset, path, text=False):
    """Write a dataset directory; binary by default, CSV with text=True."""
    os.makedirs(path, exist_ok=True)
    manifest = ds.manifest_dict()
    manifest["mode"] = "text" if text else "binary"
    manifest["config_hash"] = config_hash(manifest["config"])

    arrays = {}
    if text:
        header = CIRCLE_PARAM_HEADER if ds.config.scenario == "circle" else LOOP_PARAM_HEADER
        m = ds.data_dim // 2
        data_header = ([f"re_{i+1}" for i in range(m)] + [f"im_{i+1}" for i in range(m)]
                       if ds.config.scenario != "circle" else ["x", "y"])
        arrays["params"] = write_matrix_csv(ds.params_disk, header,
                                            os.path.join(path, "params.csv"))
        arrays["clean"] = write_matrix_csv(ds.clean, data_header,
                                           os.path.join(path, "clean.csv"))
        arrays["noisy"] = write_matrix_csv(ds.noisy, data_header,
                                           os.path.join(path, "noisy.csv"))
        arrays["split"] = write_matrix_csv(ds.split.astype(np.int64), ["split"],
                                           os.path.join(path, "split.csv"))
    else:
        arrays["params"] = write_array_bin(ds.params_disk, os.path.join(path, "params.bin"))
        arrays["clean"] = write_array_bin(ds.clean, os.path.join(path, "clean.bin"))
        arrays["noisy"] = write_array_bin(ds.noisy, os.path.join(path, "noisy.bin"))
        arrays["split"] = write_array_bin(ds.split, os.path.join(path, "split.bin"))
    manifest["arrays"] = arrays
    write_json(manifest, os.path.join(path, "manifest.json"))


def load_dataset(path) -> Dataset:
    manifest = read_json(os.path.join(path, "manifest.json"))
    version = manifest.get("format_version")
    if version != DATASET_FORMAT_VERSION:
        raise FormatVersionError(
            f"dataset format version {version} is not supported "
            f"(this build reads version {DATASET_FORMAT_VERSION})")
    cfg = SamplingConfig.from_dict(manifest["config"])
    mode = manifest.get("mode", "binary")
    read = read_matrix_csv if mode == "text" else read_array_bin

    def load(name):
        entry = manifest["arrays"][name]
        return read(os.path.join(path, entry["file"]), entry)

    ext = load("params")
    split = load("split").astype(np.int8).reshape(-1)
    freqs = manifest.get("frequencies")
    build = manifest.get("build")
    return Dataset(config=cfg,
                   params_disk=ext,
                   params=to_internal_params(cfg.scenario, ext),
                   clean=load("clean"), noisy=load("noisy"), split=split,
                   frequencies=None if freqs is None else FrequencySet(np.array(freqs)),
                   build=None if build is None else LoopBuildConfig.from_dict(build))
