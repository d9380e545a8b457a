"""Evaluation metrics: texture index of a difference histogram and
normalized stress-series errors."""

from __future__ import annotations

import numpy as np

__all__ = ["texture_index", "relative_errors"]


def texture_index(hist_pred, hist_ref):
    """Normalized texture index of the difference histogram.

    T_d = sum (f_pred - f_ref)^2 dg / sum f_ref^2 dg over a shared bin
    partition; 0 iff the histograms are identical.
    """
    if not hist_pred.same_partition(hist_ref):
        raise ValueError("histograms use different bin partitions")
    d = hist_pred.density - hist_ref.density
    den = (hist_ref.density ** 2).sum()
    if den <= 0:
        raise ValueError("reference histogram is empty")
    return float((d ** 2).sum() / den)


def relative_errors(p_ref, p_pred):
    """(mean_rel, max_rel) stress-series errors, both normalized by
    max |p_ref|."""
    p_ref = np.asarray(p_ref, dtype=float)
    p_pred = np.asarray(p_pred, dtype=float)
    if p_ref.shape != p_pred.shape or p_ref.size == 0:
        raise ValueError("series must be nonempty and equal length")
    scale = np.abs(p_ref).max()
    if scale <= 0:
        raise ValueError("reference series is identically zero")
    err = np.abs(p_ref - p_pred)
    return float(err.mean() / scale), float(err.max() / scale)
