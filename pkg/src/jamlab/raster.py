"""Rasterise waveforms into fixed-size normalised feature grids.

The image pipeline is rasterise -> resize shortest side -> centre crop ->
per-channel standardisation. Each stage is available as a plain function on
:class:`FeatureGrid` and as a scikit-learn transformer on ``(n, C, H, W)``
arrays so the stages compose inside a :class:`sklearn.pipeline.Pipeline`.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.pipeline import Pipeline
from sklearn.utils.validation import check_is_fitted

from .errors import CropError, FormatError, InputError, StatsError

GRID_SIZE = 300
RESIZE_TO = 350
N_CHANNELS = 3
BACKGROUND = 1.0
STROKE = 0.0

JGRD_MAGIC = b"JGRD"
JGRD_VERSION = 1
_JGRD_HEADER = struct.Struct("<4sHHIII")
_NORM_CODES = {"raw": 0, "normalized": 1}


@dataclass
class FeatureGrid:
    values: np.ndarray
    norm_state: str = "raw"

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 3:
            raise InputError(f"feature grid must be C x H x W, got shape {self.values.shape}")
        if self.norm_state not in _NORM_CODES:
            raise InputError(f"unknown norm_state {self.norm_state!r}")

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class NormStats:
    mean: tuple
    std: tuple

    def __post_init__(self):
        mean = tuple(float(m) for m in np.atleast_1d(self.mean))
        std = tuple(float(s) for s in np.atleast_1d(self.std))
        if len(mean) != len(std):
            raise StatsError("mean and std must have one entry per channel")
        if any(not s > 0 for s in std):
            raise StatsError(f"std must be positive per channel, got {std}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def to_dict(self):
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["mean"]), tuple(d["std"]))


# ---------------------------------------------------------------------------
# rasterisation

def _line_pixels(cols, rows):
    """Integer DDA over a polyline; returns pixel coordinates of every segment."""
    dc = np.diff(cols)
    dr = np.diff(rows)
    steps = np.ceil(np.maximum(np.abs(dc), np.abs(dr)) - 1e-9).astype(np.int64)
    steps = np.maximum(steps, 1)
    seg = np.repeat(np.arange(dc.size), steps + 1)
    start = np.cumsum(steps + 1) - (steps + 1)
    k = np.arange(seg.size) - np.repeat(start, steps + 1)
    frac = k / steps[seg]
    c = np.rint(cols[seg] + frac * dc[seg]).astype(np.int64)
    r = np.rint(rows[seg] + frac * dr[seg]).astype(np.int64)
    return r, c


def rasterize_waveform(buf, height=GRID_SIZE, width=GRID_SIZE, dtype=np.float32) -> FeatureGrid:
    """Draw the real part of ``buf`` as a binary polyline on a white canvas.

    Amplitude is scaled by the peak magnitude so +max maps to row 0 and -max
    to the bottom row; zero sits on the centre row. The grayscale raster is
    replicated into three identical channels.
    """
    x = np.real(np.asarray(getattr(buf, "samples", buf)))
    if x.size == 0:
        raise InputError("cannot rasterise an empty buffer")
    peak = np.max(np.abs(x))
    y = x / peak if peak > 0 else np.zeros_like(x)
    rows = (1.0 - y) / 2.0 * (height - 1)
    if x.size == 1:
        cols = np.array([(width - 1) / 2.0])
    else:
        cols = np.arange(x.size) * ((width - 1) / (x.size - 1))
    canvas = np.full((height, width), BACKGROUND, dtype=dtype)
    if x.size == 1:
        canvas[int(np.rint(rows[0])), int(np.rint(cols[0]))] = STROKE
    else:
        r, c = _line_pixels(cols, rows)
        canvas[r, c] = STROKE
    return FeatureGrid(np.broadcast_to(canvas, (N_CHANNELS, height, width)).copy(), "raw")


# ---------------------------------------------------------------------------
# geometry

def _bilinear_matrix(n_in, n_out):
    """Interpolation weights with half-pixel centres, edges clamped."""
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = src - i0
    m = np.zeros((n_out, n_in))
    np.add.at(m, (np.arange(n_out), i0), 1.0 - w1)
    np.add.at(m, (np.arange(n_out), i1), w1)
    return m


def resized_shape(h, w, target=RESIZE_TO):
    if h <= w:
        return target, int(target * w / h)
    return int(target * h / w), target


def resize_array(values, target=RESIZE_TO):
    """Bilinear resize of the last two axes so the shorter one equals ``target``."""
    h, w = values.shape[-2:]
    nh, nw = resized_shape(h, w, target)
    if (nh, nw) == (h, w):
        return values.copy()
    mh = _bilinear_matrix(h, nh).astype(values.dtype, copy=False)
    mw = _bilinear_matrix(w, nw).astype(values.dtype, copy=False)
    return np.matmul(np.matmul(mh, values), mw.T)


def resize_shortest_side(grid: FeatureGrid, target=RESIZE_TO) -> FeatureGrid:
    return FeatureGrid(resize_array(grid.values, target), grid.norm_state)


def crop_offsets(h, w, size=GRID_SIZE):
    if h < size or w < size:
        raise CropError(f"cannot crop {size}x{size} from {h}x{w}")
    return (h - size) // 2, (w - size) // 2


def crop_array(values, size=GRID_SIZE):
    top, left = crop_offsets(*values.shape[-2:], size)
    return values[..., top:top + size, left:left + size].copy()


def center_crop(grid: FeatureGrid, size=GRID_SIZE) -> FeatureGrid:
    return FeatureGrid(crop_array(grid.values, size), grid.norm_state)


# ---------------------------------------------------------------------------
# normalisation

class RunningChannelStats:
    """Streaming per-channel mean/std in float64 (population std)."""

    def __init__(self, n_channels=N_CHANNELS):
        self.count = 0
        self.sum = np.zeros(n_channels)
        self.sumsq = np.zeros(n_channels)

    def update(self, values):
        v = np.asarray(values, dtype=np.float64)
        v = v.reshape(-1, *v.shape[-3:]) if v.ndim > 3 else v[None]
        self.count += v.shape[0] * v.shape[2] * v.shape[3]
        self.sum += v.sum(axis=(0, 2, 3))
        self.sumsq += (v ** 2).sum(axis=(0, 2, 3))

    def result(self) -> NormStats:
        if self.count == 0:
            raise StatsError("no values accumulated")
        mean = self.sum / self.count
        var = np.maximum(self.sumsq / self.count - mean ** 2, 0.0)
        return NormStats(tuple(mean), tuple(np.sqrt(var)))


def compute_norm_stats(values) -> NormStats:
    """Exact two-pass statistics over ``(C, H, W)`` or ``(n, C, H, W)`` values."""
    v = np.asarray(values, dtype=np.float64)
    axes = (1, 2) if v.ndim == 3 else (0, 2, 3)
    return NormStats(tuple(v.mean(axis=axes)), tuple(v.std(axis=axes)))


def normalize_array(values, stats: NormStats):
    c = values.shape[-3]
    if len(stats.mean) != c:
        raise StatsError(f"stats describe {len(stats.mean)} channels, grid has {c}")
    mean = np.asarray(stats.mean).reshape(c, 1, 1)
    std = np.asarray(stats.std).reshape(c, 1, 1)
    out = (values.astype(np.float64) - mean) / std
    return out.astype(values.dtype if np.issubdtype(values.dtype, np.floating) else np.float64)


def normalize(grid: FeatureGrid, stats: NormStats | None = None) -> FeatureGrid:
    """Standardise per channel; with ``stats=None`` the grid's own statistics are used."""
    if grid.norm_state != "raw":
        raise InputError("grid is already normalized")
    if stats is None:
        stats = compute_norm_stats(grid.values)
    return FeatureGrid(normalize_array(grid.values, stats), "normalized")


def preprocess(buf, size=GRID_SIZE, resize_to=None, stats=None) -> FeatureGrid:
    """Rasterise at ``size`` then resize, crop and (optionally) normalise.

    ``resize_to`` defaults to the 350/300 ratio applied to ``size``.
    """
    resize_to = scaled_resize_target(size) if resize_to is None else resize_to
    g = rasterize_waveform(buf, size, size)
    g = center_crop(resize_shortest_side(g, resize_to), size)
    return normalize(g, stats) if stats is not None else g


def scaled_resize_target(size):
    """Resize target keeping the 350:300 zoom for non-canonical grid sizes."""
    return int(round(size * RESIZE_TO / GRID_SIZE))


# ---------------------------------------------------------------------------
# file format

def save_grid(grid: FeatureGrid, path):
    c, h, w = grid.values.shape
    with open(path, "wb") as fh:
        fh.write(_JGRD_HEADER.pack(JGRD_MAGIC, JGRD_VERSION, _NORM_CODES[grid.norm_state], c, h, w))
        fh.write(np.ascontiguousarray(grid.values, dtype="<f4").tobytes())


def read_grid_header(path):
    with open(path, "rb") as fh:
        head = fh.read(_JGRD_HEADER.size)
    if len(head) < _JGRD_HEADER.size:
        raise FormatError(f"{path}: truncated JGRD header")
    magic, version, norm, c, h, w = _JGRD_HEADER.unpack(head)
    if magic != JGRD_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != JGRD_VERSION:
        raise FormatError(f"{path}: unsupported JGRD version {version}")
    states = {v: k for k, v in _NORM_CODES.items()}
    if norm not in states:
        raise FormatError(f"{path}: unknown norm_state code {norm}")
    return {"magic": "JGRD", "version": version, "norm_state": states[norm],
            "channels": c, "height": h, "width": w}


def load_grid(path) -> FeatureGrid:
    hdr = read_grid_header(path)
    shape = (hdr["channels"], hdr["height"], hdr["width"])
    data = np.fromfile(path, dtype="<f4", offset=_JGRD_HEADER.size)
    if data.size != int(np.prod(shape)):
        raise FormatError(f"{path}: expected {int(np.prod(shape))} values, found {data.size}")
    return FeatureGrid(data.reshape(shape).astype(np.float32), hdr["norm_state"])


# ---------------------------------------------------------------------------
# scikit-learn transformers

class WaveformRasterizer(BaseEstimator, TransformerMixin):
    """Map a sequence of sample buffers to an ``(n, 3, height, width)`` array."""

    def __init__(self, height=GRID_SIZE, width=GRID_SIZE):
        self.height = height
        self.width = width

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return np.stack([rasterize_waveform(b, self.height, self.width).values for b in X])


class ShortestSideResizer(BaseEstimator, TransformerMixin):
    def __init__(self, target=RESIZE_TO):
        self.target = target

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return resize_array(_check_grids(X), self.target)


class CenterCropper(BaseEstimator, TransformerMixin):
    def __init__(self, size=GRID_SIZE):
        self.size = size

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return crop_array(_check_grids(X), self.size)


class ChannelStandardizer(BaseEstimator, TransformerMixin):
    """Per-channel standardisation; ``fit`` learns :class:`NormStats` from the data.

    Pre-computed statistics may be injected through ``stats``; ``fit`` then
    leaves them untouched.
    """

    def __init__(self, stats=None):
        self.stats = stats

    def fit(self, X, y=None):
        self.stats_ = self.stats if self.stats is not None else compute_norm_stats(_check_grids(X))
        return self

    def transform(self, X):
        check_is_fitted(self, "stats_")
        return normalize_array(_check_grids(X), self.stats_)


def _check_grids(X):
    X = np.asarray(X)
    if X.ndim != 4:
        raise InputError(f"expected an (n, C, H, W) array, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise InputError("grids contain non-finite values")
    return X


def make_pipeline(size=GRID_SIZE, resize_to=None, stats=None) -> Pipeline:
    """Full buffer -> normalised-grid pipeline."""
    resize_to = scaled_resize_target(size) if resize_to is None else resize_to
    return Pipeline([
        ("rasterize", WaveformRasterizer(size, size)),
        ("resize", ShortestSideResizer(resize_to)),
        ("crop", CenterCropper(size)),
        ("standardize", ChannelStandardizer(stats)),
    ])
