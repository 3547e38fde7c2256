"""Keypoint heatmap processing: normalization, center location, Gaussian
refinement, and merging into the spatial-attention supervision target.

Coordinate convention: x indexes rows (height H), y indexes columns
(width W). Normalized centers live in [0,1]^2 and are rescaled onto the
attention-mask grid before the Gaussian is evaluated on integer cell
indices 0 <= a < J, 0 <= b < K.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_GAMMA = 14.0


class DegenerateHeatmapError(ValueError):
    """Raised for a constant raw heatmap, where min-max scaling is undefined."""


@dataclass
class KeypointTrack:
    """Per-frame centers (pixel coordinates) for face and both hands.

    points has shape (T, 3, 2): [frame, {face, left hand, right hand},
    {x (row), y (col)}]; height/width give the frame resolution.
    """

    points: np.ndarray
    height: int
    width: int

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 3 or self.points.shape[1:] != (3, 2):
            raise ValueError(f"keypoint track must be (T,3,2), got {self.points.shape}")
        x, y = self.points[..., 0], self.points[..., 1]
        if (x < 0).any() or (x > self.height - 1).any() or (y < 0).any() or (y > self.width - 1).any():
            raise ValueError("keypoint coordinates out of frame bounds")

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class RefinedHeatmap:
    grid: np.ndarray
    gamma_x: float
    gamma_y: float


def normalize_heatmap(raw: np.ndarray) -> np.ndarray:
    """Min-max scale a raw grid into [0,1] with both endpoints attained."""
    raw = np.asarray(raw, dtype=np.float64)
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        raise DegenerateHeatmapError("degenerate heatmap: constant activation grid")
    return (raw - lo) / (hi - lo)


def locate_center(h: np.ndarray) -> tuple[float, float]:
    """Normalized argmax location; ties broken by smallest row-major index."""
    h = np.asarray(h)
    rows, cols = h.shape
    if rows < 2 or cols < 2:
        raise ValueError(f"heatmap must be at least 2x2, got {h.shape}")
    idx = np.unravel_index(np.argmax(h), h.shape)
    return idx[0] / (rows - 1), idx[1] / (cols - 1)


def gaussian_value(a: float, b: float, cx: float, cy: float, j: int, k: int,
                   gamma_x: float, gamma_y: float) -> float:
    """The refinement Gaussian evaluated at grid coordinates (a, b)."""
    return float(np.exp(-0.5 * (((a - cx) ** 2) / (j / gamma_x) ** 2
                                + ((b - cy) ** 2) / (k / gamma_y) ** 2)))


def refine_heatmap(center: tuple[float, float], j: int, k: int,
                   gamma_x: float = DEFAULT_GAMMA,
                   gamma_y: float = DEFAULT_GAMMA) -> RefinedHeatmap:
    """Gaussian bump on a JxK grid, peaked at the rescaled center."""
    if j < 2 or k < 2:
        raise ValueError("grid must be at least 2x2")
    if gamma_x <= 0 or gamma_y <= 0:
        raise ValueError("gamma values must be positive")
    cx = center[0] * (j - 1)
    cy = center[1] * (k - 1)
    a = np.arange(j, dtype=np.float64)[:, None]
    b = np.arange(k, dtype=np.float64)[None, :]
    grid = np.exp(-0.5 * ((a - cx) ** 2 / (j / gamma_x) ** 2
                          + (b - cy) ** 2 / (k / gamma_y) ** 2))
    return RefinedHeatmap(grid=grid, gamma_x=gamma_x, gamma_y=gamma_y)


def merge_heatmaps(*grids: np.ndarray) -> np.ndarray:
    """Elementwise maximum of any number of same-shape grids."""
    if not grids:
        raise ValueError("merge_heatmaps needs at least one grid")
    out = np.asarray(grids[0], dtype=np.float64)
    for g in grids[1:]:
        g = np.asarray(g, dtype=np.float64)
        if g.shape != out.shape:
            raise ValueError(f"heatmap shapes {out.shape} and {g.shape} differ")
        out = np.maximum(out, g)
    return out


def keypoints_to_target(track: KeypointTrack, frame: int, j: int, k: int,
                        gamma_x: float = DEFAULT_GAMMA,
                        gamma_y: float = DEFAULT_GAMMA) -> np.ndarray:
    """Build the merged JxK supervision grid for one frame of a track."""
    pts = track.points[frame]
    grids = []
    for x, y in pts:
        center = (x / (track.height - 1), y / (track.width - 1))
        grids.append(refine_heatmap(center, j, k, gamma_x, gamma_y).grid)
    return merge_heatmaps(*grids)


def track_targets(track: KeypointTrack, j: int, k: int,
                  gamma_x: float = DEFAULT_GAMMA,
                  gamma_y: float = DEFAULT_GAMMA) -> np.ndarray:
    """Supervision grids for every frame, stacked to (T, J, K)."""
    return np.stack([
        keypoints_to_target(track, t, j, k, gamma_x, gamma_y) for t in range(len(track))
    ])
