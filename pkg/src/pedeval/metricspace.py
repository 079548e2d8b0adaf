"""Distances and densities shared by the metric suite."""

from __future__ import annotations

import math

import numba as nb
import numpy as np


def emd_1d(a, b) -> float:
    """Wasserstein-1 distance between two empirical 1-D distributions.

    Each sample carries weight ``1/len``; sizes may differ. Computed as the
    integral of ``|F_a - F_b|`` over the merged support.
    """
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("emd_1d needs two non-empty samples")
    support = np.concatenate([a, b])
    support.sort(kind="mergesort")
    widths = np.diff(support)
    cdf_a = np.searchsorted(a, support[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b, support[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * widths))


@nb.njit(cache=True)
def _dtw_kernel(x, y, band):
    n = x.shape[0]
    m = y.shape[0]
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        lo = 1
        hi = m
        if band >= 0:
            # band is measured along the rescaled diagonal
            centre = (i - 1) * (m - 1) / max(n - 1, 1) + 1
            lo = max(1, int(math.floor(centre - band)))
            hi = min(m, int(math.ceil(centre + band)))
        for j in range(lo, hi + 1):
            dx = x[i - 1, 0] - y[j - 1, 0]
            dy = x[i - 1, 1] - y[j - 1, 1]
            best = acc[i - 1, j - 1]
            if acc[i - 1, j] < best:
                best = acc[i - 1, j]
            if acc[i, j - 1] < best:
                best = acc[i, j - 1]
            acc[i, j] = math.sqrt(dx * dx + dy * dy) + best
    return acc[n, m]


def dtw(t1, t2, band: int | None = None) -> float:
    """Dynamic time warping between two 2-D point sequences.

    Ground cost is the Euclidean distance, path cost is the sum over the
    alignment. ``band`` (in samples) restricts the search around the diagonal;
    ``None`` searches every monotone path.
    """
    x = np.ascontiguousarray(t1, dtype=np.float64).reshape(-1, 2)
    y = np.ascontiguousarray(t2, dtype=np.float64).reshape(-1, 2)
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise ValueError("dtw needs two non-empty sequences")
    return float(_dtw_kernel(x, y, -1 if band is None else int(band)))


def dtw_matrix(seqs_a, seqs_b, band: int | None = None) -> np.ndarray:
    out = np.empty((len(seqs_a), len(seqs_b)))
    for i, a in enumerate(seqs_a):
        for j, b in enumerate(seqs_b):
            out[i, j] = dtw(a, b, band)
    return out


def knn_radius(query, others, k: int = 4) -> float | None:
    """Distance from ``query`` to its k-th nearest point in ``others``.

    ``others`` must not contain the query agent itself. Returns ``None`` when
    fewer than ``k`` points are available.
    """
    others = np.asarray(others, dtype=float).reshape(-1, 2)
    if others.shape[0] < k or k < 1:
        return None
    d = np.sqrt(np.sum((others - np.asarray(query, dtype=float)) ** 2, axis=1))
    return float(np.sort(d, kind="stable")[k - 1])


def local_density(r: float | None, k: int = 4) -> float | None:
    """``k / (pi r^2)`` agents per square meter; ``None`` for r of 0 or None."""
    if r is None or r <= 0:
        return None
    return k / (math.pi * r * r)


def silverman_bandwidth(x: np.ndarray) -> float:
    std = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(std, (q75 - q25) / 1.34) if q75 > q25 else std
    return 0.9 * spread * x.size ** (-0.2)


def kde_mode(samples, bandwidth: str | float = "silverman", grid_size: int = 512) -> float:
    """Mode of a Gaussian KDE, searched on an even grid over the sample range.

    Ties go to the smallest grid value.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("kde_mode needs at least one sample")
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        return lo
    if bandwidth == "silverman":
        bw = silverman_bandwidth(x)
    else:
        bw = float(bandwidth)
    if not bw > 0:
        bw = (hi - lo) / grid_size
    grid = np.linspace(lo, hi, grid_size)
    density = np.zeros(grid_size)
    chunk = 8192
    for start in range(0, x.size, chunk):
        z = (grid[:, None] - x[None, start : start + chunk]) / bw
        density += np.exp(-0.5 * z * z).sum(axis=1)
    return float(grid[int(np.argmax(density))])
