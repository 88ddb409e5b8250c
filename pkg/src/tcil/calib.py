"""Probabilities, calibration-error metrics, and 1-D temperature fitting.

The temperature optimizer minimizes mean cross-entropy of temperature-scaled
logits over a bounded interval: a 64-point coarse scan in log-temperature
brackets the minimum, then golden-section search refines it. ECE and AECE
accumulate in plain Python floats, bin by bin in sample order, so results
are reproducible bit-for-bit against a straight-line re-evaluation of the
definitions.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass

import numpy as np

from . import nnet
from .datagen import stack_samples

Array = np.ndarray

DEFAULT_TEMPERATURE_BOUNDS = (0.05, 20.0)
DEFAULT_TOLERANCE = 1e-4
DEFAULT_NUM_BINS = 10

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class Probs:
    """Softmax output for one sample; ``prediction`` is a 1-based class."""

    p: Array
    confidence: float
    prediction: int


def softmax_with_temp(logits: Array, temperature: float) -> Probs:
    """Numerically stable softmax of ``logits / temperature``."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    logits = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(logits).all():
        raise ValueError("logits must be finite")
    scaled = logits / temperature
    scaled = scaled - scaled.max()
    exp = np.exp(scaled)
    p = exp / exp.sum()
    pred = int(np.argmax(p)) + 1
    return Probs(p=p, confidence=float(p[pred - 1]), prediction=pred)


def probs_matrix(logits: Array, temperature: float) -> Array:
    """Row-wise temperature-scaled softmax for an (n, K) logit matrix."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    scaled = np.asarray(logits, dtype=np.float64) / temperature
    scaled = scaled - scaled.max(axis=1, keepdims=True)
    exp = np.exp(scaled)
    return exp / exp.sum(axis=1, keepdims=True)


def probs_rows(logits: Array, temperature: float) -> list[Probs]:
    matrix = probs_matrix(logits, temperature)
    preds = matrix.argmax(axis=1)
    return [
        Probs(p=matrix[i], confidence=float(matrix[i, preds[i]]), prediction=int(preds[i]) + 1)
        for i in range(matrix.shape[0])
    ]


def _stack_dataset(dataset) -> tuple[Array, Array]:
    pairs = list(dataset)
    if not pairs:
        raise ValueError("dataset must be nonempty")
    logits = np.stack([np.asarray(z, dtype=np.float64) for z, _ in pairs])
    labels = np.array([y for _, y in pairs], dtype=np.int64)
    return logits, labels


def _nll_arrays(logits: Array, labels: Array, temperature: float) -> float:
    scaled = logits / temperature
    peak = scaled.max(axis=1)
    lse = peak + np.log(np.exp(scaled - peak[:, None]).sum(axis=1))
    picked = scaled[np.arange(len(labels)), labels - 1]
    return float(np.mean(lse - picked))


def nll(dataset, temperature: float) -> float:
    """Mean negative log-likelihood of (logits, label) pairs at ``temperature``."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    logits, labels = _stack_dataset(dataset)
    return _nll_arrays(logits, labels, temperature)


def temp_opt(
    dataset,
    bounds: tuple[float, float] = DEFAULT_TEMPERATURE_BOUNDS,
    tolerance: float = DEFAULT_TOLERANCE,
) -> float:
    """Temperature minimizing the NLL of ``dataset`` over ``bounds``.

    Works in log-temperature: a 64-point scan locates the basin, golden
    section narrows it to ``tolerance`` (log-space width). The result is
    clamped to the bounds; when the loss is monotone over the interval the
    exact boundary value is returned.
    """
    lo, hi = bounds
    if not (0 < lo < hi):
        raise ValueError("bounds must satisfy 0 < low < high")
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    logits, labels = _stack_dataset(dataset)

    def loss_log(log_t: float) -> float:
        return _nll_arrays(logits, labels, math.exp(log_t))

    grid = np.linspace(math.log(lo), math.log(hi), 64)
    values = [loss_log(g) for g in grid]
    best = int(np.argmin(values))
    a = grid[max(best - 1, 0)]
    b = grid[min(best + 1, len(grid) - 1)]

    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = loss_log(c), loss_log(d)
    while b - a > tolerance:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = loss_log(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = loss_log(d)
    refined = min(max(math.exp((a + b) / 2.0), lo), hi)

    # Boundary candidates first so a monotone loss returns the bound exactly.
    candidates = (lo, hi, refined)
    losses = [_nll_arrays(logits, labels, t) for t in candidates]
    return candidates[int(np.argmin(losses))]


def _bin_index(confidence: float, upper_edges: list[float]) -> int:
    # Bin i covers (i/B, (i+1)/B]; a confidence of exactly 0 joins bin 0.
    if confidence <= 0.0:
        return 0
    return bisect_left(upper_edges, confidence)


def ece(samples, num_bins: int = DEFAULT_NUM_BINS) -> float:
    """Expected calibration error with equal-width confidence bins.

    ``samples`` is a sequence of (Probs, label) pairs. Returned as a
    fraction in [0, 1]; empty bins contribute nothing.
    """
    samples = list(samples)
    if num_bins < 1:
        raise ValueError("num_bins must be >= 1")
    if not samples:
        raise ValueError("samples must be nonempty")
    edges = [k / num_bins for k in range(1, num_bins + 1)]
    counts = [0] * num_bins
    hits = [0.0] * num_bins
    conf_sums = [0.0] * num_bins
    for probs, label in samples:
        b = _bin_index(probs.confidence, edges)
        counts[b] += 1
        hits[b] += 1.0 if probs.prediction == label else 0.0
        conf_sums[b] += probs.confidence
    n = len(samples)
    total = 0.0
    for b in range(num_bins):
        if counts[b]:
            total += (counts[b] / n) * abs(hits[b] / counts[b] - conf_sums[b] / counts[b])
    return total


def aece(samples, num_bins: int = DEFAULT_NUM_BINS) -> float:
    """Adaptive (equal-mass) calibration error.

    Samples are sorted by ascending confidence; bins hold floor(N/B)
    samples with the N mod B leftovers going one each to the
    highest-confidence bins.
    """
    samples = list(samples)
    if num_bins < 1:
        raise ValueError("num_bins must be >= 1")
    n = len(samples)
    if n < num_bins:
        raise ValueError(f"need at least {num_bins} samples, got {n}")
    ordered = sorted(samples, key=lambda pair: pair[0].confidence)
    base, rem = divmod(n, num_bins)
    sizes = [base] * (num_bins - rem) + [base + 1] * rem
    total = 0.0
    start = 0
    for size in sizes:
        hits = 0.0
        conf_sum = 0.0
        for probs, label in ordered[start : start + size]:
            hits += 1.0 if probs.prediction == label else 0.0
            conf_sum += probs.confidence
        total += (size / n) * abs(hits / size - conf_sum / size)
        start += size
    return total


@dataclass(frozen=True)
class BinRow:
    lower: float
    upper: float
    count: int
    accuracy: float
    confidence: float


def bin_stats(samples, num_bins: int = DEFAULT_NUM_BINS, scheme: str = "equal_width") -> list[BinRow]:
    """Per-bin counts and mean accuracy/confidence for plotting."""
    samples = list(samples)
    if scheme not in ("equal_width", "equal_mass"):
        raise ValueError(f"unknown binning scheme {scheme!r}")
    if not samples:
        raise ValueError("samples must be nonempty")
    rows: list[BinRow] = []
    if scheme == "equal_width":
        edges = [k / num_bins for k in range(1, num_bins + 1)]
        groups: list[list[tuple[Probs, int]]] = [[] for _ in range(num_bins)]
        for pair in samples:
            groups[_bin_index(pair[0].confidence, edges)].append(pair)
        for b, group in enumerate(groups):
            acc = sum(1.0 for p, y in group if p.prediction == y) / len(group) if group else 0.0
            conf = sum(p.confidence for p, _ in group) / len(group) if group else 0.0
            rows.append(BinRow(b / num_bins, (b + 1) / num_bins, len(group), acc, conf))
    else:
        n = len(samples)
        if n < num_bins:
            raise ValueError(f"need at least {num_bins} samples, got {n}")
        ordered = sorted(samples, key=lambda pair: pair[0].confidence)
        base, rem = divmod(n, num_bins)
        sizes = [base] * (num_bins - rem) + [base + 1] * rem
        start = 0
        for size in sizes:
            group = ordered[start : start + size]
            acc = sum(1.0 for p, y in group if p.prediction == y) / size
            conf = sum(p.confidence for p, _ in group) / size
            rows.append(
                BinRow(group[0][0].confidence, group[-1][0].confidence, size, acc, conf)
            )
            start += size
    return rows


@dataclass(frozen=True)
class CalibrationReport:
    temperature: float
    nll: float
    ece: float
    aece: float
    bins: list[BinRow]


def calibration_report(
    model, samples, temperature: float, num_bins: int = DEFAULT_NUM_BINS
) -> CalibrationReport:
    """Metrics of ``model`` on ``samples`` at a given temperature."""
    xs, ys = stack_samples(samples)
    logits = nnet.forward_batch(model, xs).logits
    pairs = list(zip(probs_rows(logits, temperature), ys.tolist()))
    return CalibrationReport(
        temperature=temperature,
        nll=_nll_arrays(logits, ys, temperature),
        ece=ece(pairs, num_bins),
        aece=aece(pairs, num_bins),
        bins=bin_stats(pairs, num_bins),
    )


def optimal_ts_oracle(
    model,
    test_samples,
    bounds: tuple[float, float] = DEFAULT_TEMPERATURE_BOUNDS,
    tolerance: float = DEFAULT_TOLERANCE,
) -> float:
    """Temperature fitted on held-out test data across all tasks.

    Reporting/diagnostics only: this peeks at test labels and must never
    feed back into the calibration pipeline.
    """
    xs, ys = stack_samples(test_samples)
    logits = nnet.forward_batch(model, xs).logits
    return temp_opt(list(zip(logits, ys.tolist())), bounds, tolerance)
