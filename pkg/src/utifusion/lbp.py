"""Local binary pattern texture descriptor.

A pixel's code thresholds its circular neighborhood against the pixel's
own gray level: code = sum over p of s(g_p - g_c) * 2^p, where s(x) is 1
for x >= 0 and 0 otherwise. An equal neighbor therefore counts as 1, so a
constant image codes to 2^P - 1 everywhere.

Sampling conventions (fixed so that independent oracles can reproduce the
codes exactly):

* Neighbor p sits at angle 2*pi*p/P, with p = 0 due east and angles
  turning counter-clockwise on screen. In array coordinates the sample
  point is (row - R*sin(theta), col + R*cos(theta)).
* ``nearest`` interpolation rounds sample coordinates with ``np.rint``;
  for P = 8, R = 1 this reproduces the classic 8-neighbor 3x3 operator.
* ``bilinear`` interpolation uses two-stage linear interpolation, which
  preserves constant images exactly.
* Pixels within ceil(R) of the border get code 0 and are excluded from
  histograms: no texture is invented at the image edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class LBPConfig:
    """Neighborhood geometry: P sample points on a circle of radius R."""

    p: int = 8
    r: float = 1.0
    interpolation: str = "nearest"

    def __post_init__(self):
        if self.p < 4:
            raise ValueError(f"LBPConfig.p must be >= 4, got {self.p}")
        if self.r < 1:
            raise ValueError(f"LBPConfig.r must be >= 1, got {self.r}")
        if self.interpolation not in ("nearest", "bilinear"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")

    @property
    def n_codes(self) -> int:
        return 1 << self.p

    @property
    def margin(self) -> int:
        """Border width (in pixels) that cannot be coded."""
        return math.ceil(self.r)


DEFAULT_CONFIG = LBPConfig()


@dataclass(frozen=True)
class LBPFeatures:
    """Histogram of LBP codes over the interior of one image.

    Normalized histograms sum to 1; unnormalized ones sum to the number
    of interior pixels counted.
    """

    histogram: np.ndarray
    config: LBPConfig = field(default_factory=lambda: DEFAULT_CONFIG)
    normalized: bool = True

    def __post_init__(self):
        hist = np.asarray(self.histogram, dtype=np.float64)
        if hist.shape != (self.config.n_codes,):
            raise ValueError(
                f"histogram length {hist.shape} does not match 2^P = {self.config.n_codes}"
            )
        if np.any(hist < 0):
            raise ValueError("histogram entries must be non-negative")
        object.__setattr__(self, "histogram", hist)


def to_grayscale(image) -> np.ndarray:
    """Convert a [3,H,W] image with values in [0,255] to luma grayscale.

    Uses 0.299*R + 0.587*G + 0.114*B, clamped to [0, 255].
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected a [3,H,W] image, got shape {image.shape}")
    wr, wg, wb = LUMA_WEIGHTS
    gray = wr * image[0] + wg * image[1] + wb * image[2]
    return np.clip(gray, 0.0, 255.0)


def lbp_code(center: float, neighbors, p: int = 8) -> int:
    """Code one pixel from its center value and ordered neighbor samples."""
    neighbors = np.asarray(neighbors, dtype=np.float64)
    if neighbors.shape != (p,):
        raise ValueError(f"expected exactly {p} neighbor values, got shape {neighbors.shape}")
    code = 0
    for bit, g in enumerate(neighbors):
        if g >= center:
            code += 1 << bit
    return code


def _sample_offsets(config: LBPConfig) -> list[tuple[float, float]]:
    """(row, col) offsets of the P sample points relative to the center."""
    offsets = []
    for p in range(config.p):
        theta = 2.0 * math.pi * p / config.p
        offsets.append((-config.r * math.sin(theta), config.r * math.cos(theta)))
    return offsets


def _bilinear_shift(gray: np.ndarray, margin: int, dr: float, dc: float) -> np.ndarray:
    """Sample the interior grid shifted by a constant subpixel offset."""
    h, w = gray.shape
    rows = np.arange(margin, h - margin, dtype=np.float64) + dr
    cols = np.arange(margin, w - margin, dtype=np.float64) + dc
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    fr = rows - r0
    fc = cols - c0
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    top = gray[np.ix_(r0, c0)] + fc[None, :] * (gray[np.ix_(r0, c1)] - gray[np.ix_(r0, c0)])
    bot = gray[np.ix_(r1, c0)] + fc[None, :] * (gray[np.ix_(r1, c1)] - gray[np.ix_(r1, c0)])
    return top + fr[:, None] * (bot - top)


def lbp_map(gray, config: LBPConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Code every interior pixel of a [H,W] grayscale image.

    Border pixels within ceil(R) of the edge receive code 0; they carry no
    full neighborhood and are excluded from histograms downstream.
    """
    gray = np.asarray(gray, dtype=np.float64)
    if gray.ndim != 2:
        raise ValueError(f"expected a [H,W] grayscale image, got shape {gray.shape}")
    h, w = gray.shape
    m = config.margin
    if h <= 2 * m or w <= 2 * m:
        raise ValueError(f"image {h}x{w} smaller than the {config.p}-point radius-{config.r} neighborhood")
    center = gray[m : h - m, m : w - m]
    codes = np.zeros((h, w), dtype=np.int64)
    acc = np.zeros(center.shape, dtype=np.int64)
    for bit, (dr, dc) in enumerate(_sample_offsets(config)):
        if config.interpolation == "nearest":
            ir = int(np.rint(dr))
            ic = int(np.rint(dc))
            sample = gray[m + ir : h - m + ir, m + ic : w - m + ic]
        else:
            sample = _bilinear_shift(gray, m, dr, dc)
        acc += (sample >= center).astype(np.int64) << bit
    codes[m : h - m, m : w - m] = acc
    return codes


def lbp_histogram(codes, config: LBPConfig = DEFAULT_CONFIG, normalize: bool = True) -> LBPFeatures:
    """Histogram interior codes into 2^P bins.

    Border-fill codes are excluded: only the interior of the code map is
    counted, using the margin implied by ``config``.
    """
    codes = np.asarray(codes)
    if codes.ndim != 2:
        raise ValueError(f"expected a [H,W] code map, got shape {codes.shape}")
    h, w = codes.shape
    m = config.margin
    if h <= 2 * m or w <= 2 * m:
        raise ValueError(f"code map {h}x{w} smaller than the radius-{config.r} neighborhood")
    interior = codes[m : h - m, m : w - m]
    if np.any(interior < 0) or np.any(interior >= config.n_codes):
        bad = interior[(interior < 0) | (interior >= config.n_codes)][0]
        raise ValueError(f"code {bad} out of range [0, {config.n_codes})")
    hist = np.bincount(interior.ravel().astype(np.int64), minlength=config.n_codes).astype(np.float64)
    if normalize:
        hist /= interior.size
    return LBPFeatures(histogram=hist, config=config, normalized=normalize)


def features_from_image(image, config: LBPConfig = DEFAULT_CONFIG, normalize: bool = True) -> LBPFeatures:
    """Grayscale a [3,H,W] image and return its LBP histogram."""
    gray = to_grayscale(image)
    return lbp_histogram(lbp_map(gray, config), config, normalize=normalize)
