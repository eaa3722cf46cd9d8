"""Evaluation harnesses: metric reports with intervals, the
label-efficiency protocol, and correlation between generated and real
clips' phenotype readouts."""

from __future__ import annotations

import numpy as np

from .stats import (
    MetricsReport,
    bootstrap_ci,
    confusion_metrics,
    pearson_r,
    roc_auc,
    wilson_interval,
)


def evaluate_classification(scores: np.ndarray, labels: np.ndarray,
                            task_id: str, threshold: float = 0.5,
                            confidence: float = 0.95, n_boot: int = 1000,
                            seed: int = 0) -> MetricsReport:
    """AUC (bootstrap CI) plus thresholded proportions (Wilson CIs).

    scores: probability of the positive class; labels: 0/1.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(int)
    rep = MetricsReport(task_id=task_id, n=labels.size)

    auc = roc_auc(scores, labels)
    paired = np.stack([scores, labels.astype(float)], axis=1)

    def auc_stat(rows):
        lab = rows[:, 1].astype(int)
        if lab.min() == lab.max():
            return None  # resample lost one class; redraw
        return roc_auc(rows[:, 0], lab)

    auc_ci = bootstrap_ci(auc_stat, paired, n_boot=n_boot, seed=seed,
                          confidence=confidence)
    # clamp: percentile intervals of a resampled statistic can sit slightly
    # off the point estimate; report the bracketing hull
    rep.add_metric("auc", auc, ci=(min(auc_ci[0], auc), max(auc_ci[1], auc)),
                   ci_method="bootstrap")

    conf = confusion_metrics(scores, labels, threshold)
    counts = conf["counts"]
    denominators = {
        "accuracy": labels.size,
        "sensitivity": counts["tp"] + counts["fn"],
        "specificity": counts["tn"] + counts["fp"],
        "ppv": counts["tp"] + counts["fp"],
        "npv": counts["tn"] + counts["fn"],
    }
    for name, den in denominators.items():
        value = conf[name]
        if value is None:
            continue
        k = int(round(value * den))
        rep.add_metric(name, value,
                       ci=wilson_interval(k, den, confidence),
                       ci_method="wilson")
    return rep


def evaluate_regression(estimates: np.ndarray, targets: np.ndarray,
                        task_id: str, confidence: float = 0.95,
                        n_boot: int = 1000, seed: int = 0) -> MetricsReport:
    """Pearson r per output column with bootstrap CIs."""
    estimates = np.atleast_2d(np.asarray(estimates, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if estimates.shape != targets.shape:
        raise ValueError("estimates/targets shape mismatch")
    rep = MetricsReport(task_id=task_id, n=estimates.shape[0])
    for j in range(estimates.shape[1]):
        pair = np.stack([estimates[:, j], targets[:, j]], axis=1)
        r = pearson_r(pair[:, 0], pair[:, 1])

        def r_stat(rows):
            try:
                return pearson_r(rows[:, 0], rows[:, 1])
            except ValueError:
                return None

        ci = bootstrap_ci(r_stat, pair, n_boot=n_boot, seed=seed + j,
                          confidence=confidence)
        rep.add_metric(f"pearson_r_{j}", r,
                       ci=(min(ci[0], r), max(ci[1], r)),
                       ci_method="bootstrap")
    return rep


def label_efficiency_curve(fractions, seeds, run_cell, n_boot: int = 500,
                           confidence: float = 0.95) -> list:
    """Run ``run_cell(fraction, seed) -> test metric`` over the grid.

    Returns rows {fraction, median, ci, values}; the CI is a bootstrap
    interval of the median across seeds. Failures propagate with the
    offending cell named.
    """
    rows = []
    for fraction in fractions:
        values = []
        for seed in seeds:
            try:
                values.append(float(run_cell(fraction, seed)))
            except Exception as exc:
                raise RuntimeError(
                    f"label-efficiency cell failed at fraction={fraction} "
                    f"seed={seed}: {exc}") from exc
        values_arr = np.array(values)
        median = float(np.median(values_arr))
        if len(values) > 1:
            ci = bootstrap_ci(np.median, values_arr, n_boot=max(100, n_boot),
                              seed=0, confidence=confidence)
            ci = (min(ci[0], median), max(ci[1], median))
        else:
            ci = (median, median)
        rows.append({"fraction": float(fraction), "median": median,
                     "ci": ci, "values": values})
    return rows


def gen_vs_real_correlation(real_clips, generated_clips, readout,
                            n_boot: int = 1000, seed: int = 0,
                            confidence: float = 0.95) -> list:
    """Apply a phenotype readout to paired real/generated clips and
    correlate per phenotype.

    readout(clip) -> vector of phenotype estimates. Returns one
    {"r", "ci"} dict per phenotype entry.
    """
    if len(real_clips) != len(generated_clips):
        raise ValueError("real and generated clips must pair per subject")
    real = np.stack([np.asarray(readout(c), dtype=float) for c in real_clips])
    gen = np.stack([np.asarray(readout(c), dtype=float)
                    for c in generated_clips])
    out = []
    for j in range(real.shape[1]):
        pair = np.stack([gen[:, j], real[:, j]], axis=1)
        r = pearson_r(pair[:, 0], pair[:, 1])

        def r_stat(rows):
            try:
                return pearson_r(rows[:, 0], rows[:, 1])
            except ValueError:
                return None

        ci = bootstrap_ci(r_stat, pair, n_boot=n_boot, seed=seed + j,
                          confidence=confidence)
        out.append({"r": r, "ci": (min(ci[0], r), max(ci[1], r))})
    return out
