"""Evaluation statistics: ROC/confusion metrics, intervals, paired tests.

AUC is computed from the Mann-Whitney statistic (exact under ties) rather
than trapezoidal integration over thresholds. Confidence intervals are
Wilson score for binomial proportions and percentile bootstrap for
everything else. Paired comparisons use the DeLong test for AUCs and
two-sided z-tests for other metrics.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm, rankdata

from .seeding import substream

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# point estimates
# ---------------------------------------------------------------------------

def roc_auc(scores, labels) -> float:
    """AUC via the normalized Mann-Whitney U statistic; ties count 1/2."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(int)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and same length")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc requires both classes present")
    ranks = rankdata(scores)  # midranks handle ties
    rank_sum_pos = ranks[labels == 1].sum()
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def confusion_metrics(preds, labels, threshold: float) -> dict:
    """2x2 table ratios at ``pred >= threshold``.

    Ratios with a zero denominator are reported as None (absent), never
    silently coerced to 0 or 1.
    """
    if not math.isfinite(threshold):
        raise ValueError("threshold must be finite")
    preds = np.asarray(preds, dtype=float)
    labels = np.asarray(labels).astype(int)
    hat = (preds >= threshold).astype(int)
    tp = int(np.sum((hat == 1) & (labels == 1)))
    tn = int(np.sum((hat == 0) & (labels == 0)))
    fp = int(np.sum((hat == 1) & (labels == 0)))
    fn = int(np.sum((hat == 0) & (labels == 1)))

    def ratio(num, den):
        return num / den if den > 0 else None

    return {
        "accuracy": ratio(tp + tn, tp + tn + fp + fn),
        "sensitivity": ratio(tp, tp + fn),
        "specificity": ratio(tn, tn + fp),
        "ppv": ratio(tp, tp + fp),
        "npv": ratio(tn, tn + fn),
        "counts": {"tp": tp, "fp": fp, "tn": tn, "fn": fn},
    }


def pearson_r(x, y) -> float:
    """Sample Pearson correlation."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != y.size or x.size < 2:
        raise ValueError("need two same-length vectors with n >= 2")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if denom == 0.0:
        raise ValueError("pearson_r undefined for constant input")
    return float(xc @ yc / denom)


# ---------------------------------------------------------------------------
# intervals
# ---------------------------------------------------------------------------

def wilson_interval(successes: int, trials: int, confidence: float = 0.95):
    """Wilson score interval for a binomial proportion."""
    k, n = int(successes), int(trials)
    if n < 1 or not 0 <= k <= n:
        raise ValueError(f"invalid successes/trials: {k}/{n}")
    z = norm.ppf(0.5 + confidence / 2.0)
    p = k / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = (z / denom) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    lo = max(0.0, center - half)
    hi = min(1.0, center + half)
    return (lo, hi)


def bootstrap_ci(statistic, data, n_boot: int = 2000, seed: int = 0,
                 confidence: float = 0.95):
    """Percentile bootstrap interval, deterministic given ``seed``.

    Resamples use independent seeded substreams so evaluation order cannot
    change the result. A resample on which the statistic is undefined
    (raises or returns a non-finite value) is redrawn from the same
    substream; redraw counts are logged.
    """
    data = np.asarray(data)
    if data.shape[0] == 0:
        raise ValueError("data must be nonempty")
    if n_boot < 100:
        raise ValueError("n_boot must be >= 100")
    n = data.shape[0]
    stats = np.empty(n_boot)
    redraws = 0
    for b in range(n_boot):
        rng = substream(seed, "bootstrap", b)
        while True:
            idx = rng.integers(0, n, size=n)
            try:
                val = statistic(data[idx])
            except ValueError:
                val = None
            if val is not None and np.isfinite(val):
                stats[b] = val
                break
            redraws += 1
            if redraws > 100 * n_boot:
                raise RuntimeError("statistic undefined on too many resamples")
    if redraws:
        logger.info("bootstrap_ci: redrew %d undefined resamples", redraws)
    alpha = (1.0 - confidence) / 2.0
    lo, hi = np.quantile(stats, [alpha, 1.0 - alpha])
    return (float(lo), float(hi))


# ---------------------------------------------------------------------------
# paired tests
# ---------------------------------------------------------------------------

@dataclass
class DelongResult:
    z: float | None
    p: float | None
    auc_a: float
    auc_b: float
    variance: float


def _placement_values(scores, labels):
    """DeLong structural components (V10 per positive, V01 per negative)."""
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    # psi[i, j] = 1 if pos_i > neg_j, 1/2 on ties, 0 otherwise
    psi = (pos[:, None] > neg[None, :]).astype(float)
    psi += 0.5 * (pos[:, None] == neg[None, :])
    return psi.mean(axis=1), psi.mean(axis=0)


def delong_test(scores_a, scores_b, labels) -> DelongResult:
    """Paired DeLong test for the difference of two correlated AUCs."""
    scores_a = np.asarray(scores_a, dtype=float)
    scores_b = np.asarray(scores_b, dtype=float)
    labels = np.asarray(labels).astype(int)
    if not (scores_a.shape == scores_b.shape == labels.shape):
        raise ValueError("paired scores must share the label vector's shape")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("delong_test requires both classes present")

    v10_a, v01_a = _placement_values(scores_a, labels)
    v10_b, v01_b = _placement_values(scores_b, labels)
    auc_a = float(v10_a.mean())
    auc_b = float(v10_b.mean())

    s10 = np.cov(np.stack([v10_a, v10_b])) if n_pos > 1 else np.zeros((2, 2))
    s01 = np.cov(np.stack([v01_a, v01_b])) if n_neg > 1 else np.zeros((2, 2))
    var = float((s10[0, 0] + s10[1, 1] - 2 * s10[0, 1]) / n_pos
                + (s01[0, 0] + s01[1, 1] - 2 * s01[0, 1]) / n_neg)

    delta = auc_a - auc_b
    if var <= 1e-16:
        if abs(delta) <= 1e-12:
            # identical classifiers: zero difference with zero variance
            return DelongResult(z=0.0, p=1.0, auc_a=auc_a, auc_b=auc_b,
                                variance=var)
        logger.warning("delong_test: degenerate variance %g with nonzero "
                       "AUC difference %g; p-value not reported", var, delta)
        return DelongResult(z=None, p=None, auc_a=auc_a, auc_b=auc_b,
                            variance=var)
    z = delta / math.sqrt(var)
    p = 2.0 * (1.0 - norm.cdf(abs(z)))
    return DelongResult(z=float(z), p=float(p), auc_a=auc_a, auc_b=auc_b,
                        variance=var)


def two_sided_z_test(est_a: float, est_b: float, se_a: float, se_b: float) -> float:
    """p-value of z = (a-b)/sqrt(se_a^2 + se_b^2) against N(0,1)."""
    if se_a <= 0 or se_b <= 0:
        raise ValueError("standard errors must be positive")
    z = (est_a - est_b) / math.sqrt(se_a * se_a + se_b * se_b)
    return float(2.0 * (1.0 - norm.cdf(abs(z))))


def one_vs_rest(labels, n_classes: int | None = None) -> np.ndarray:
    """Binarize integer labels into K one-vs-rest vectors, shape [K, N]."""
    labels = np.asarray(labels).astype(int)
    k = int(labels.max()) + 1 if n_classes is None else int(n_classes)
    if k < 2:
        raise ValueError("one_vs_rest requires K >= 2")
    out = np.zeros((k, labels.size), dtype=int)
    out[labels, np.arange(labels.size)] = 1
    return out


# ---------------------------------------------------------------------------
# report container
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    """Point estimates, intervals and paired tests for one evaluation run."""

    task_id: str
    n: int
    metrics: dict = field(default_factory=dict)
    paired_tests: list = field(default_factory=list)

    def add_metric(self, name: str, estimate: float, ci=None, ci_method=None):
        if ci is not None:
            lo, hi = ci
            if not (lo <= estimate <= hi):
                raise ValueError(f"{name}: CI {ci} does not bracket {estimate}")
        self.metrics[name] = {
            "estimate": estimate,
            "ci": list(ci) if ci is not None else None,
            "ci_method": ci_method,
        }

    def add_paired_test(self, metric: str, method: str, statistic, p_value):
        if p_value is not None and not 0.0 <= p_value <= 1.0:
            raise ValueError(f"p-value out of range: {p_value}")
        self.paired_tests.append({
            "metric": metric, "method": method,
            "statistic": statistic, "p_value": p_value,
        })

    def to_json(self) -> str:
        payload = {
            "task_id": self.task_id, "n": self.n,
            "metrics": self.metrics, "paired_tests": self.paired_tests,
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        d = json.loads(text)
        rep = cls(task_id=d["task_id"], n=d["n"])
        rep.metrics = d["metrics"]
        rep.paired_tests = d["paired_tests"]
        return rep

    def csv_rows(self):
        rows = [("metric", "estimate", "ci_lo", "ci_hi", "ci_method")]
        for name, m in sorted(self.metrics.items()):
            lo, hi = (m["ci"] or (None, None))
            rows.append((name, m["estimate"], lo, hi, m["ci_method"]))
        return rows
