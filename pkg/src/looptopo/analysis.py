"""Evaluation metrics, percentile statistics, PCA projection, CSV exports."""

import csv
from dataclasses import dataclass, field

import numpy as np

from .embeddings import gamma, moebius_distance
from .errors import ValidationError

QUANTILE_LEVELS = (0.05, 0.25, 0.5, 0.75, 0.95)


def normalized_abs_error(pred, truth, interval):
    """|pred - truth| divided by the interval length."""
    lo, hi = interval
    if not hi > lo:
        raise ValidationError(f"interval must have positive length, got ({lo}, {hi})")
    return np.abs(np.asarray(pred, dtype=float) - np.asarray(truth, dtype=float)) / (hi - lo)


def circular_error(pred, truth):
    """Shortest angular distance on the circle, range [0, pi]."""
    d = np.abs(np.asarray(pred, dtype=float) - np.asarray(truth, dtype=float)) % (2 * np.pi)
    return np.minimum(d, 2 * np.pi - d)


def moebius_error(pred, truth):
    """Strip distance between (alpha, c) pairs; identified pairs score zero."""
    return moebius_distance(pred, truth)


def moebius_error_scaled(pred_params, truth_params):
    """Complete-task orientation/curvature error in eccentricity-scaled
    strip coordinates: || eps_p * gamma(a_p, c_p) - eps_t * gamma(a_t, c_t) ||.

    Collapsed shapes (both eps near 0) score near zero regardless of angles,
    matching the rotation invariance of circular sources.
    """
    p = np.asarray(pred_params, dtype=float)
    t = np.asarray(truth_params, dtype=float)
    tp = p[..., 4, None] * gamma(p[..., 5], p[..., 6])
    tt = t[..., 4, None] * gamma(t[..., 5], t[..., 6])
    return np.linalg.norm(tp - tt, axis=-1)


def nearest_rank_quantile(values, q):
    """Nearest-rank quantile: smallest x with #{v <= x} >= q * n."""
    a = np.sort(np.asarray(values, dtype=float).ravel())
    if a.size == 0:
        raise ValidationError("quantile of an empty array")
    if not 0.0 <= q <= 1.0:
        raise ValidationError(f"quantile level must be in [0, 1], got {q}")
    if q == 0.0:
        return float(a[0])
    rank = int(np.ceil(q * a.size))
    return float(a[min(rank, a.size) - 1])


def quantile_summary(values, levels=QUANTILE_LEVELS):
    out = {"min": float(np.min(values)), "max": float(np.max(values)),
           "mean": float(np.mean(values)), "count": int(np.size(values))}
    for q in levels:
        out[f"q{int(round(q * 100)):02d}"] = nearest_rank_quantile(values, q)
    return out


def boxplot_stats(values):
    """min / q25 / median / q75 / max, nearest-rank convention."""
    return {"min": float(np.min(values)),
            "q25": nearest_rank_quantile(values, 0.25),
            "median": nearest_rank_quantile(values, 0.5),
            "q75": nearest_rank_quantile(values, 0.75),
            "max": float(np.max(values))}


@dataclass(frozen=True)
class PcaModel:
    """Top-k principal axes of a feature matrix."""

    mean: np.ndarray                    # (d,)
    axes: np.ndarray                    # (k, d), orthonormal rows
    singular_values: np.ndarray         # (k,)
    explained_variance_ratio: np.ndarray  # (k,), non-increasing

    @property
    def k(self):
        return self.axes.shape[0]


def pca_fit(x, k=3) -> PcaModel:
    """Principal axes via the d x d covariance eigendecomposition.

    The feature dimension is small (60), which makes the covariance route
    cheap and exact. Axis signs follow a fixed convention: the entry of
    largest magnitude in each axis is made positive.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValidationError(f"expected a 2-D sample matrix, got shape {x.shape}")
    n, d = x.shape
    if k < 1 or k > d:
        raise ValidationError(f"k must be in [1, {d}], got {k}")
    if n < k:
        raise ValidationError(f"need at least {k} samples, got {n}")
    mean = x.mean(axis=0)
    y = x - mean
    denom = max(n - 1, 1)
    cov = y.T @ y / denom
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    axes = evecs[:, order].T[:k]
    for row in axes:
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            row *= -1.0
    total = evals.sum()
    ratios = evals[:k] / total if total > 0 else np.zeros(k)
    return PcaModel(mean=mean, axes=axes,
                    singular_values=np.sqrt(evals[:k] * denom),
                    explained_variance_ratio=ratios)


def pca_project(model: PcaModel, v):
    """Coordinates of v along the principal axes; accepts (d,) or (n, d)."""
    v = np.asarray(v, dtype=float)
    return (v - model.mean) @ model.axes.T


@dataclass
class MetricReport:
    """Per-parameter error arrays with quantile summaries."""

    task: str
    kind: str
    n_samples: int
    per_param: dict = field(default_factory=dict)   # name -> error array
    summaries: dict = field(default_factory=dict)   # name -> quantile dict
    extra: dict = field(default_factory=dict)

    def to_json_dict(self):
        return {"task": self.task, "kind": self.kind, "n_samples": self.n_samples,
                "summaries": self.summaries, "extra": self.extra}


_S_PARAM_NAMES = ("x_c", "y_c", "flux", "sigma", "eps")


def evaluate_predictions(task, kind, truth, pred, intervals) -> MetricReport:
    """Error report for matched truth/prediction parameter arrays.

    circle: circular error of the angle. simple: strip distance plus raw
    alpha error. complete: normalized absolute errors of the five scale
    parameters plus the eccentricity-scaled strip distance.
    """
    truth = np.asarray(truth, dtype=float)
    pred = np.asarray(pred, dtype=float)
    if truth.shape != pred.shape:
        raise ValidationError(f"shape mismatch: truth {truth.shape}, pred {pred.shape}")
    report = MetricReport(task=task, kind=kind, n_samples=truth.shape[0])

    if task == "circle":
        report.per_param["theta_circular"] = circular_error(pred[:, 0], truth[:, 0])
        report.per_param["theta_raw"] = np.abs(pred[:, 0] - truth[:, 0])
    elif task == "simple":
        report.per_param["moebius"] = moebius_error(pred[:, -2:], truth[:, -2:])
        report.per_param["alpha_raw"] = np.abs(pred[:, -2] - truth[:, -2])
        report.per_param["c_raw"] = np.abs(pred[:, -1] - truth[:, -1])
    else:
        for j, name in enumerate(_S_PARAM_NAMES):
            report.per_param[f"{name}_norm"] = normalized_abs_error(
                pred[:, j], truth[:, j], intervals[name])
        report.per_param["moebius_scaled"] = moebius_error_scaled(pred, truth)
    for name, arr in report.per_param.items():
        report.summaries[name] = quantile_summary(arr)
    return report


def export_scatter(rows, header, path, comment=None):
    """Write per-sample records with a stable header; floats as %.10g.

    An optional leading '#' comment line carries run provenance without
    disturbing numeric readers.
    """
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{v:.10g}" if isinstance(v, float) else str(v)
                             for v in row])
