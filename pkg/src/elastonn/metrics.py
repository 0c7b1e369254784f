"""Error measures and summary statistics used across experiments."""

from __future__ import annotations

import numpy as np


def discrete_l2_norm(values, cell_volume):
    """sqrt(dV * sum_i sum_j f_j(X_i)^2) on an equidistant lattice (dV = V/N)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("empty field")
    return float(np.sqrt(cell_volume * np.sum(values * values)))


def rel_l2(values, reference, cell_volume=1.0):
    """||f - ref|| / ||ref|| in the discrete L2 norm (dV cancels)."""
    ref_norm = discrete_l2_norm(reference, cell_volume)
    if ref_norm == 0.0:
        raise ValueError("reference field has zero norm")
    return discrete_l2_norm(np.asarray(values) - np.asarray(reference), cell_volume) / ref_norm


def rel_l2_dataset(predictions, references):
    """Per-case rel-L2 ratios over matching rows; returns (mean, median, per-case)."""
    predictions = np.asarray(predictions, dtype=np.float64)
    references = np.asarray(references, dtype=np.float64)
    num = np.sqrt(np.sum((predictions - references) ** 2, axis=-1))
    den = np.sqrt(np.sum(references**2, axis=-1))
    ratios = num / den
    return float(ratios.mean()), float(np.median(ratios)), ratios


def stats(values):
    """mean/median/min/max/quartiles of a non-empty sequence."""
    values = np.asarray(list(values), dtype=np.float64)
    if values.size == 0:
        raise ValueError("empty input")
    return {
        "mean": float(values.mean()),
        "median": float(np.median(values)),
        "min": float(values.min()),
        "max": float(values.max()),
        "q1": float(np.percentile(values, 25)),
        "q3": float(np.percentile(values, 75)),
    }
