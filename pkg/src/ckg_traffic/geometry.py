"""Planar geometry for road buffers: point-to-polyline distance and raster overlap.

Coordinates are metres in a local planar frame. Roads are polylines, POIs are
points, land parcels are axis-aligned rectangles ``(xmin, ymin, xmax, ymax)``.
A buffer of distance ``d`` around a road is the set of points within ``d`` of
the polyline (a union of capsules).
"""
from __future__ import annotations

import numpy as np

from .errors import DegenerateGeometry


def point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from points ``p`` (..., 2) to segment ``a``-``b``.

    Zero-length segments degrade to point distance.
    """
    p = np.asarray(p, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.hypot(p[..., 0] - a[0], p[..., 1] - a[1])
    t = np.clip(((p[..., 0] - a[0]) * ab[0] + (p[..., 1] - a[1]) * ab[1]) / denom, 0.0, 1.0)
    dx = p[..., 0] - (a[0] + t * ab[0])
    dy = p[..., 1] - (a[1] + t * ab[1])
    return np.hypot(dx, dy)


def point_polyline_distance(p: np.ndarray, line: np.ndarray) -> np.ndarray:
    line = np.asarray(line, dtype=np.float64)
    if line.ndim != 2 or line.shape[0] < 1 or line.shape[1] != 2:
        raise DegenerateGeometry("polyline needs at least one 2-D vertex")
    if line.shape[0] == 1:
        return point_segment_distance(p, line[0], line[0])
    d = point_segment_distance(p, line[0], line[1])
    for i in range(1, line.shape[0] - 1):
        d = np.minimum(d, point_segment_distance(p, line[i], line[i + 1]))
    return d


def polyline_length(line: np.ndarray) -> float:
    line = np.asarray(line, dtype=np.float64)
    return float(np.hypot(*np.diff(line, axis=0).T).sum()) if len(line) > 1 else 0.0


def polyline_midpoint(line: np.ndarray) -> np.ndarray:
    """Point halfway along the polyline's length."""
    line = np.asarray(line, dtype=np.float64)
    if len(line) == 1:
        return line[0].copy()
    seg = np.hypot(*np.diff(line, axis=0).T)
    total = seg.sum()
    if total == 0.0:
        return line[0].copy()
    half = total / 2.0
    acc = np.concatenate([[0.0], np.cumsum(seg)])
    i = int(np.searchsorted(acc, half, side="right") - 1)
    i = min(i, len(seg) - 1)
    t = (half - acc[i]) / seg[i] if seg[i] > 0 else 0.0
    return line[i] + t * (line[i + 1] - line[i])


def _check_rect(rect) -> tuple[float, float, float, float]:
    x0, y0, x1, y1 = map(float, rect)
    if not (x1 > x0 and y1 > y0):
        raise DegenerateGeometry(f"parcel rectangle has no area: {rect}")
    return x0, y0, x1, y1


class BufferRaster:
    """Distance field of one road sampled at pixel centres.

    The grid covers the road's bounding box grown by ``max_dist`` and is
    aligned to multiples of ``resolution`` so results do not depend on which
    road a raster was built for.
    """

    def __init__(self, line: np.ndarray, max_dist: float, resolution: float = 1.0):
        if max_dist <= 0:
            raise DegenerateGeometry("buffer distance must be positive")
        line = np.asarray(line, dtype=np.float64)
        self.res = float(resolution)
        lo = np.floor((line.min(axis=0) - max_dist) / self.res) * self.res
        hi = np.ceil((line.max(axis=0) + max_dist) / self.res) * self.res
        self.x0, self.y0 = lo
        nx = int(round((hi[0] - lo[0]) / self.res))
        ny = int(round((hi[1] - lo[1]) / self.res))
        xs = self.x0 + (np.arange(nx) + 0.5) * self.res
        ys = self.y0 + (np.arange(ny) + 0.5) * self.res
        gx, gy = np.meshgrid(xs, ys)
        self.dist = point_polyline_distance(np.stack([gx, gy], axis=-1), line)
        self.max_dist = float(max_dist)

    def buffer_pixels(self, dists: np.ndarray) -> np.ndarray:
        """Pixel count inside each buffer distance."""
        dists = np.asarray(dists, dtype=np.float64)
        flat = np.sort(self.dist.reshape(-1))
        return np.searchsorted(flat, dists, side="right").astype(np.float64)

    def overlap_pixels(self, rect, dists: np.ndarray) -> np.ndarray:
        """Pixels inside both ``rect`` and each buffer distance."""
        x0, y0, x1, y1 = _check_rect(rect)
        ny, nx = self.dist.shape
        # pixel centre c = origin + (i + 0.5) * res lies in [x0, x1)
        i0 = max(0, int(np.ceil((x0 - self.x0) / self.res - 0.5)))
        i1 = min(nx, int(np.ceil((x1 - self.x0) / self.res - 0.5)))
        j0 = max(0, int(np.ceil((y0 - self.y0) / self.res - 0.5)))
        j1 = min(ny, int(np.ceil((y1 - self.y0) / self.res - 0.5)))
        dists = np.asarray(dists, dtype=np.float64)
        if i1 <= i0 or j1 <= j0:
            return np.zeros(len(dists))
        sub = np.sort(self.dist[j0:j1, i0:i1].reshape(-1))
        return np.searchsorted(sub, dists, side="right").astype(np.float64)


def buffer_land_ratio(line: np.ndarray, parcel, dist: float, resolution: float = 1.0) -> float:
    """Share of the road's ``dist`` buffer covered by the rectangle ``parcel``."""
    if dist <= 0:
        raise DegenerateGeometry("buffer distance must be positive")
    _check_rect(parcel)
    r = BufferRaster(line, dist, resolution)
    total = r.buffer_pixels([dist])[0]
    if total == 0:
        raise DegenerateGeometry("buffer contains no raster cells")
    return float(r.overlap_pixels(parcel, [dist])[0] / total)
