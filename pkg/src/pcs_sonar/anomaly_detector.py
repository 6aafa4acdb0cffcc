"""Two-sample Kolmogorov-Smirnov screening for out-of-library targets.

During cross-validation every in-class held-out patch contributes its
normalized likelihood at the true class, giving each class a reference
sample of what "belongs" looks like.  A test image's patches produce the
same statistic at whichever class the classifier assigned; if the empirical
CDFs of test and reference samples differ by more than the KS critical
threshold, the image is flagged as foreign to the training library.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MIN_REFERENCE_SAMPLES = 20
MIN_TEST_SAMPLES = 5


@dataclass
class ReferenceDistribution:
    """Validated in-class likelihood sample for one class."""

    label: str
    samples: np.ndarray
    min_count: int = MIN_REFERENCE_SAMPLES

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float).ravel()
        if self.samples.size < self.min_count:
            raise ValueError(
                f"reference for {self.label!r} has {self.samples.size} samples, "
                f"need at least {self.min_count}"
            )
        if np.any(self.samples <= 0.0) or np.any(self.samples >= 1.0):
            raise ValueError("reference samples must lie strictly in (0, 1)")

    @property
    def count(self) -> int:
        return self.samples.size


@dataclass
class KsDecision:
    statistic: float
    threshold: float
    alpha: float
    flagged: bool
    assigned_label: str

    def __post_init__(self):
        if not 0.0 <= self.statistic <= 1.0:
            raise ValueError("KS statistic must lie in [0, 1]")
        if self.flagged != (self.statistic > self.threshold):
            raise ValueError("flag must equal statistic > threshold")


def ks_statistic(samples_a, samples_b) -> float:
    """sup_x |F_a(x) - F_b(x)| over the two empirical CDFs (two-sided)."""
    a = np.sort(np.asarray(samples_a, dtype=float).ravel())
    b = np.sort(np.asarray(samples_b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    pooled = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pooled, side="right") / a.size
    cdf_b = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


def ks_critical(alpha: float, count_a: int, count_b: int) -> float:
    """Two-sample critical value c(alpha) * sqrt((H + I) / (H I)).

    Uses the standard asymptotic inverse c(alpha) = sqrt(-ln(alpha/2) / 2).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if count_a < 1 or count_b < 1:
        raise ValueError("sample counts must be >= 1")
    c = math.sqrt(-math.log(alpha / 2.0) / 2.0)
    return c * math.sqrt((count_a + count_b) / (count_a * count_b))


def detect_anomaly(
    record,
    model,
    alpha: float = 0.001,
    min_test_samples: int = MIN_TEST_SAMPLES,
    min_reference: int = MIN_REFERENCE_SAMPLES,
) -> KsDecision:
    """Screen a classified patch record against its assigned class's reference.

    The test sample is the record's normalized likelihood column at the
    assigned class (one value per patch).  Flags when the KS statistic
    exceeds the critical threshold at the given alpha.
    """
    k_star = record.predicted_index
    label = model.class_labels[k_star]
    ref_raw = model.reference_samples[k_star]
    if len(ref_raw) == 0:
        raise ValueError(f"missing reference samples for class {label!r}")
    reference = ReferenceDistribution(label, ref_raw, min_count=min_reference)
    test = np.asarray(record.normalized[:, k_star], dtype=float)
    if test.size < min_test_samples:
        raise ValueError(
            f"need at least {min_test_samples} patch values, got {test.size}"
        )
    stat = ks_statistic(reference.samples, test)
    threshold = ks_critical(alpha, reference.count, test.size)
    return KsDecision(
        statistic=stat,
        threshold=threshold,
        alpha=alpha,
        flagged=stat > threshold,
        assigned_label=label,
    )


def binned_frequencies(values, nbins: int = 32, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """Diagnostic histogram counts on uniform bins over (lo, hi)."""
    counts, _ = np.histogram(np.asarray(values, dtype=float), bins=nbins, range=(lo, hi))
    return counts


def write_reference_samples(path, samples) -> None:
    """One float per line; repr round-trips the exact values."""
    vals = np.asarray(samples, dtype=float).ravel()
    Path(path).write_text("\n".join(repr(float(v)) for v in vals) + "\n")


def read_reference_samples(path) -> np.ndarray:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    return np.array([float(ln) for ln in lines])
