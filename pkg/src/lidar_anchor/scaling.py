"""Affine calibration of relative depth rasters against photon heights.

Relative monocular depths carry no units; a least-squares line through
(footprint-averaged depth, photon height) pairs recovers the scale and
offset that place the raster in meters.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .photons import CleanPhoton
from .raster import GeometryError, HeightRaster, footprint_mean, height_like

logger = logging.getLogger(__name__)

MIN_FIT_POINTS = 10


@dataclass(frozen=True)
class AffineFit:
    """Result of the depth-to-height line fit: height = a * depth + b."""

    a: float
    b: float
    n_points: int
    rmse: float


def fit_affine(
    depth: HeightRaster,
    photons: Sequence[CleanPhoton],
    footprint: float = 17.0,
    huber: bool = False,
    huber_delta: float = 1.0,
    huber_iters: int = 10,
) -> AffineFit:
    """Fit height = a * depth + b over the clean photons.

    Depth is sampled as a footprint mean around each photon; photons whose
    footprint has no valid depth are skipped.  Requires at least 10 usable
    points with non-constant depth.  With ``huber=True`` the ordinary fit
    is refined by iteratively reweighted least squares using Huber weights
    (unit weight inside ``huber_delta`` meters of residual, downweighted
    outside), which blunts the influence of outlier photons.

    The fit is independent of photon input order.
    """
    ds: list[float] = []
    hs: list[float] = []
    for p in photons:
        try:
            value = footprint_mean(depth, p.x, p.y, footprint)
        except GeometryError:
            continue
        if value is None:
            continue
        ds.append(value)
        hs.append(p.h_ag)

    if len(ds) < MIN_FIT_POINTS:
        raise ValueError(
            f"affine fit needs at least {MIN_FIT_POINTS} usable photons, got {len(ds)}"
        )

    d = np.array(ds, dtype=np.float64)
    h = np.array(hs, dtype=np.float64)
    # Canonical summation order so the result ignores photon ordering.
    order = np.lexsort((h, d))
    d = d[order]
    h = h[order]

    if np.ptp(d) == 0.0:
        raise ValueError("affine fit is degenerate: all depth samples are equal")

    a, b = _weighted_line(d, h, np.ones_like(d))
    if huber:
        for _ in range(huber_iters):
            resid = h - (a * d + b)
            absr = np.abs(resid)
            w = np.where(absr <= huber_delta, 1.0, huber_delta / np.maximum(absr, 1e-300))
            a, b = _weighted_line(d, h, w)

    resid = h - (a * d + b)
    rmse = float(np.sqrt(np.mean(resid * resid)))
    logger.info("affine fit: a=%.6g b=%.6g n=%d rmse=%.4g", a, b, d.size, rmse)
    return AffineFit(a=float(a), b=float(b), n_points=int(d.size), rmse=rmse)


def _weighted_line(d: np.ndarray, h: np.ndarray, w: np.ndarray) -> tuple[float, float]:
    sw = np.sum(w)
    dm = np.sum(w * d) / sw
    hm = np.sum(w * h) / sw
    cov = np.sum(w * (d - dm) * (h - hm))
    var = np.sum(w * (d - dm) ** 2)
    if var == 0.0:
        raise ValueError("affine fit is degenerate: weighted depth variance is zero")
    a = cov / var
    return float(a), float(hm - a * dm)


def apply_affine(depth: HeightRaster, fit: AffineFit) -> HeightRaster:
    """Map a relative depth raster to meters: a * depth + b, elementwise.

    Nodata pixels are preserved unchanged.
    """
    values = depth.values.astype(np.float64)
    out = fit.a * values + fit.b
    nodata = depth.header.nodata
    if nodata is not None:
        mask = depth.values == nodata
        out[mask] = nodata
    return height_like(depth.header, out.astype(np.float32), nodata=nodata)
