"""Per-step, per-dimension action statistics and normalizers.

Statistics are kept for every cell ``(h, d)`` of an ``H x D`` action
chunk: count, mean, raw second moment ``E[x^2]`` and a quantile sketch.
Per-dataset statistics combine into per-configuration statistics by
weighted moment matching, i.e. the moments of the weighted mixture:

    mean = sum_i w_i mean_i
    m2   = sum_i w_i m2_i
"""

from __future__ import annotations

import base64
import dataclasses
import json
import warnings
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from openh.errors import StatisticsError

STATS_VERSION = "1.0"
SIGMA_FLOOR = 1e-8
DEFAULT_CLIP = 5.0
# Below this many samples per cell the sketch keeps raw values and answers
# exactly; above it, values are summarized on a uniform probability grid.
EXACT_LIMIT = 10_000
SKETCH_LEVELS = np.linspace(0.0, 1.0, 1001)
LOW_Q, HIGH_Q = 0.01, 0.99
_BATCH = 1024


def _quantiles_exact(raw: np.ndarray, probs) -> np.ndarray:
    """Linear-interpolation sample quantiles along axis 0 (numpy's default)."""
    s = np.sort(raw, axis=0)
    pos = np.asarray(probs, dtype=np.float64) * (s.shape[0] - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, s.shape[0] - 1)
    frac = (pos - lo)[..., None]
    a, b = s[lo], s[hi]
    return a + frac * (b - a)


def _mix_grids(grids: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    """Invert the weighted mixture of piecewise-linear CDFs, cell by cell."""
    w = np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    L, C = grids[0].shape
    out = np.empty((L, C))
    for c in range(C):
        cols = [g[:, c] for g in grids]
        xs = np.unique(np.concatenate(cols))
        if xs.size == 1:
            out[:, c] = xs[0]
            continue
        F = np.zeros_like(xs)
        for wi, col in zip(w, cols):
            F += wi * _cdf(xs, col)
        F = np.maximum.accumulate(np.clip(F, 0.0, 1.0))
        out[:, c] = np.interp(SKETCH_LEVELS, F, xs)
        out[0, c] = xs[0]
        out[-1, c] = xs[-1]
    return out


def _cdf(x: np.ndarray, quantile_col: np.ndarray) -> np.ndarray:
    """Piecewise-linear CDF through ``(quantile_col[j], SKETCH_LEVELS[j])``."""
    lo, hi = quantile_col[0], quantile_col[-1]
    if hi == lo:
        return (x >= lo).astype(np.float64)
    # Collapse ties to their highest level so the CDF is right-continuous.
    uniq, idx = np.unique(quantile_col[::-1], return_index=True)
    levels = SKETCH_LEVELS[::-1][idx]
    return np.interp(x, uniq, levels, left=0.0, right=1.0)


class QuantileSketch:
    """Mergeable per-cell quantile sketch over ``cells`` independent streams."""

    def __init__(self, cells: int):
        self.cells = cells
        self._raw: list[np.ndarray] = []
        self._raw_count = 0
        self._grid: np.ndarray | None = None
        self._grid_count = 0

    @property
    def count(self) -> int:
        return self._raw_count + self._grid_count

    @property
    def exact(self) -> bool:
        return self._grid is None

    def add(self, batch: np.ndarray):
        batch = np.asarray(batch, dtype=np.float64).reshape(-1, self.cells)
        if batch.shape[0] == 0:
            return
        self._raw.append(batch)
        self._raw_count += batch.shape[0]
        if self._raw_count >= EXACT_LIMIT:
            self._compact()

    def _raw_values(self) -> np.ndarray:
        if len(self._raw) > 1:
            self._raw = [np.concatenate(self._raw, axis=0)]
        return self._raw[0] if self._raw else np.empty((0, self.cells))

    def _compact(self):
        if not self._raw_count:
            return
        fresh = _quantiles_exact(self._raw_values(), SKETCH_LEVELS)
        if self._grid is None:
            self._grid = fresh
        else:
            self._grid = _mix_grids([self._grid, fresh], [self._grid_count, self._raw_count])
        self._grid_count += self._raw_count
        self._raw, self._raw_count = [], 0

    def grid(self) -> np.ndarray:
        """Quantiles at ``SKETCH_LEVELS`` (``L x cells``)."""
        if self._grid is None:
            return _quantiles_exact(self._raw_values(), SKETCH_LEVELS)
        if self._raw_count:
            fresh = _quantiles_exact(self._raw_values(), SKETCH_LEVELS)
            return _mix_grids([self._grid, fresh], [self._grid_count, self._raw_count])
        return self._grid

    def quantile(self, p: float) -> np.ndarray:
        if self.count == 0:
            return np.zeros(self.cells)
        if self._grid is None:
            return _quantiles_exact(self._raw_values(), p)
        g = self.grid()
        return np.array([np.interp(p, SKETCH_LEVELS, g[:, c]) for c in range(self.cells)])

    @classmethod
    def merge(cls, sketches: Sequence["QuantileSketch"], weights: Sequence[float]) -> "QuantileSketch":
        """Mixture of sketches with the given (not necessarily count) weights."""
        cells = sketches[0].cells
        pairs = [(s, w) for s, w in zip(sketches, weights) if s.count > 0 and w > 0]
        out = cls(cells)
        if not pairs:
            return out
        total = sum(s.count for s, _ in pairs)
        wsum = sum(w for _, w in pairs)
        proportional = all(abs(w / wsum - s.count / total) <= 1e-12 for s, w in pairs)
        if proportional and all(s.exact for s, _ in pairs) and total < EXACT_LIMIT:
            out._raw = [s._raw_values() for s, _ in pairs]
            out._raw_count = total
            return out
        out._grid = _mix_grids([s.grid() for s, _ in pairs], [w for _, w in pairs])
        out._grid_count = total
        return out

    def to_dict(self) -> dict:
        if self._grid is None:
            kind, arr = "raw", self._raw_values()
        else:
            kind, arr = "grid", self.grid()
        blob = zlib.compress(np.ascontiguousarray(arr, dtype="<f8").tobytes(), 6)
        return {
            "kind": kind,
            "count": self.count,
            "rows": int(arr.shape[0]),
            "cells": self.cells,
            "levels": len(SKETCH_LEVELS),
            "encoding": "zlib+base64 float64 little-endian row-major",
            "data": base64.b64encode(blob).decode("ascii"),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuantileSketch":
        if d["levels"] != len(SKETCH_LEVELS):
            raise StatisticsError(f"sketch has {d['levels']} levels, expected {len(SKETCH_LEVELS)}")
        arr = np.frombuffer(zlib.decompress(base64.b64decode(d["data"])), dtype="<f8")
        arr = arr.reshape(d["rows"], d["cells"]).astype(np.float64)
        out = cls(d["cells"])
        if d["kind"] == "raw":
            out._raw, out._raw_count = [arr], d["count"]
        else:
            out._grid, out._grid_count = arr, d["count"]
        return out


@dataclass
class ChunkStatistics:
    horizon: int
    dims: int
    count: int
    mean: np.ndarray
    m2: np.ndarray
    q01: np.ndarray
    q99: np.ndarray
    sketch: QuantileSketch | None = None
    dataset_id: str = ""
    config_id: str = ""
    provenance: dict = field(default_factory=dict)

    @property
    def var(self) -> np.ndarray:
        return np.maximum(self.m2 - self.mean ** 2, 0.0)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.var)

    @classmethod
    def empty(cls, horizon: int, dims: int) -> "ChunkStatistics":
        z = np.zeros((horizon, dims))
        return cls(horizon, dims, 0, z, z.copy(), z.copy(), z.copy(), QuantileSketch(horizon * dims))

    def to_dict(self, include_sketch: bool = True) -> dict:
        d = {
            "openh_stats": STATS_VERSION,
            "dataset_id": self.dataset_id,
            "config_id": self.config_id,
            "horizon": self.horizon,
            "dims": self.dims,
            "count": self.count,
            "mean": self.mean.tolist(),
            "m2": self.m2.tolist(),
            "q01": self.q01.tolist(),
            "q99": self.q99.tolist(),
            "provenance": self.provenance,
        }
        if include_sketch and self.sketch is not None:
            d["sketch"] = self.sketch.to_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ChunkStatistics":
        if d.get("openh_stats") != STATS_VERSION:
            raise StatisticsError(f"unsupported statistics version {d.get('openh_stats')!r}")
        H, D = d["horizon"], d["dims"]

        def arr(key):
            a = np.asarray(d[key], dtype=np.float64)
            return a.reshape(H, D)

        sketch = QuantileSketch.from_dict(d["sketch"]) if "sketch" in d else None
        return cls(H, D, int(d["count"]), arr("mean"), arr("m2"), arr("q01"), arr("q99"), sketch,
                   d.get("dataset_id", ""), d.get("config_id", ""), d.get("provenance", {}))

    @classmethod
    def from_json(cls, text: str) -> "ChunkStatistics":
        return cls.from_dict(json.loads(text))


class _Compensated:
    """Neumaier-compensated running sum of arrays."""

    def __init__(self, shape):
        self.total = np.zeros(shape)
        self.comp = np.zeros(shape)

    def add(self, x):
        t = self.total + x
        big = np.abs(self.total) >= np.abs(x)
        self.comp += np.where(big, (self.total - t) + x, (x - t) + self.total)
        self.total = t

    def value(self):
        return self.total + self.comp


class StatisticsAccumulator:
    """Streaming accumulator behind ``compute_statistics``."""

    def __init__(self, horizon: int, dims: int):
        self.horizon, self.dims = horizon, dims
        self.count = 0
        self._sum = _Compensated((horizon, dims))
        self._sumsq = _Compensated((horizon, dims))
        self._sketch = QuantileSketch(horizon * dims)

    def update(self, batch):
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim == 2:
            batch = batch[None]
        if batch.shape[1:] != (self.horizon, self.dims):
            raise StatisticsError(f"chunk shape {batch.shape[1:]} != {(self.horizon, self.dims)}")
        if batch.shape[0] == 0:
            return
        self.count += batch.shape[0]
        self._sum.add(batch.sum(axis=0))
        self._sumsq.add((batch * batch).sum(axis=0))
        self._sketch.add(batch.reshape(batch.shape[0], -1))

    def finalize(self, **meta) -> ChunkStatistics:
        H, D = self.horizon, self.dims
        if self.count == 0:
            stats = ChunkStatistics.empty(H, D)
            return dataclasses.replace(stats, **meta)
        mean = self._sum.value() / self.count
        m2 = self._sumsq.value() / self.count
        if not self._sketch.exact:
            self._sketch._compact()
        q01 = self._sketch.quantile(LOW_Q).reshape(H, D)
        q99 = self._sketch.quantile(HIGH_Q).reshape(H, D)
        return ChunkStatistics(H, D, self.count, mean, m2, q01, q99, self._sketch, **meta)


def compute_statistics(chunks: Iterable, horizon: int | None = None, dims: int | None = None,
                       **meta) -> ChunkStatistics:
    """Statistics over a stream of ``H x D`` chunks (or ``N x H x D`` batches).

    An empty stream gives zero-count statistics, which are neutral under
    ``merge_statistics``; pass ``horizon`` and ``dims`` to size them.
    """
    acc = None
    pending: list[np.ndarray] = []
    pending_rows = 0

    def flush():
        nonlocal pending, pending_rows
        if pending:
            acc.update(np.concatenate(pending, axis=0))
        pending, pending_rows = [], 0

    for chunk in chunks:
        chunk = np.asarray(chunk, dtype=np.float64)
        if chunk.ndim == 2:
            chunk = chunk[None]
        if acc is None:
            acc = StatisticsAccumulator(chunk.shape[1], chunk.shape[2])
        elif chunk.shape[1:] != (acc.horizon, acc.dims):
            raise StatisticsError(f"chunk shape {chunk.shape[1:]} != {(acc.horizon, acc.dims)}")
        pending.append(chunk)
        pending_rows += chunk.shape[0]
        if pending_rows >= _BATCH:
            flush()
    if acc is None:
        if horizon is None or dims is None:
            raise StatisticsError("empty stream: horizon and dims are required")
        return StatisticsAccumulator(horizon, dims).finalize(**meta)
    flush()
    return acc.finalize(**meta)


def merge_statistics(stats: Sequence[ChunkStatistics], weights: Sequence[float] | None = None,
                     **meta) -> ChunkStatistics:
    """Weighted moment-matching merge.

    Weights are normalized internally; zero-count operands are dropped
    before normalization.  ``weights=None`` weighs by sample count.
    """
    if not stats:
        raise StatisticsError("nothing to merge")
    H, D = stats[0].horizon, stats[0].dims
    for s in stats:
        if (s.horizon, s.dims) != (H, D):
            raise StatisticsError(f"shape mismatch: {(s.horizon, s.dims)} vs {(H, D)}")
    if weights is None:
        weights = [s.count for s in stats]
    if len(weights) != len(stats):
        raise StatisticsError("one weight per statistics object is required")
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise StatisticsError("weights must be finite and nonnegative")
    live = [i for i, s in enumerate(stats) if s.count > 0 and w[i] > 0]
    if not live:
        if w.sum() <= 0 and any(s.count for s in stats):
            raise StatisticsError("weights must have a positive sum")
        return dataclasses.replace(ChunkStatistics.empty(H, D), **meta)
    wl = w[live] / w[live].sum()
    mean, m2 = _Compensated((H, D)), _Compensated((H, D))
    for wi, i in zip(wl, live):
        mean.add(wi * stats[i].mean)
        m2.add(wi * stats[i].m2)
    sketches = [stats[i].sketch for i in live]
    if all(s is not None for s in sketches):
        sketch = QuantileSketch.merge(sketches, wl)
        q01 = sketch.quantile(LOW_Q).reshape(H, D)
        q99 = sketch.quantile(HIGH_Q).reshape(H, D)
    else:
        # Without sketches the mixture quantiles are unknown; keep the
        # widest bounds of the operands.
        sketch = None
        q01 = np.min([stats[i].q01 for i in live], axis=0)
        q99 = np.max([stats[i].q99 for i in live], axis=0)
    m2v = m2.value()
    meanv = mean.value()
    count = int(sum(s.count for s in stats))
    return ChunkStatistics(H, D, count, meanv, m2v, q01, q99, sketch, **meta)


@dataclass(frozen=True)
class Normalizer:
    kind: str
    stats: ChunkStatistics
    clip_bound: float = DEFAULT_CLIP
    sigma_floor: float = SIGMA_FLOOR

    def __post_init__(self):
        if self.kind not in ("temporal_zscore_clip", "quantile_affine"):
            raise StatisticsError(f"unknown normalizer kind {self.kind!r}")
        if not self.clip_bound > 0:
            raise StatisticsError("clip_bound must be positive")

    @property
    def sigma(self) -> np.ndarray:
        return np.maximum(self.stats.std, self.sigma_floor)

    def normalize(self, a):
        if self.kind == "temporal_zscore_clip":
            return zscore_normalize(a, self)
        return quantile_normalize(a, self)

    def denormalize(self, y):
        if self.kind == "temporal_zscore_clip":
            return zscore_denormalize(y, self)
        return quantile_denormalize(y, self)


def _require(norm: Normalizer, kind: str):
    if norm.kind != kind:
        raise StatisticsError(f"normalizer kind is {norm.kind!r}, expected {kind!r}")


def zscore_normalize(a, norm: Normalizer) -> np.ndarray:
    """``clip((x - mean) / sigma, -clip, clip)`` per step and dimension."""
    _require(norm, "temporal_zscore_clip")
    y = (np.asarray(a, dtype=np.float64) - norm.stats.mean) / norm.sigma
    return np.clip(y, -norm.clip_bound, norm.clip_bound)


def zscore_denormalize(y, norm: Normalizer) -> np.ndarray:
    _require(norm, "temporal_zscore_clip")
    return norm.stats.mean + norm.sigma * np.asarray(y, dtype=np.float64)


def _quantile_span(norm: Normalizer):
    lo, hi = norm.stats.q01, norm.stats.q99
    degenerate = ~(hi > lo)
    if np.any(degenerate):
        warnings.warn(
            f"{int(degenerate.sum())} cell(s) with q99 <= q01 map to 0 under quantile normalization",
            RuntimeWarning,
            stacklevel=3,
        )
    return lo, np.where(degenerate, 1.0, hi - lo), degenerate


def quantile_normalize(a, norm: Normalizer) -> np.ndarray:
    """Affine map of ``[q01, q99]`` onto ``[-1, 1]``, clipped."""
    _require(norm, "quantile_affine")
    lo, span, degenerate = _quantile_span(norm)
    y = np.clip(2.0 * (np.asarray(a, dtype=np.float64) - lo) / span - 1.0, -1.0, 1.0)
    return np.where(degenerate, 0.0, y)


def quantile_denormalize(y, norm: Normalizer) -> np.ndarray:
    _require(norm, "quantile_affine")
    lo, span, degenerate = _quantile_span(norm)
    x = lo + (np.asarray(y, dtype=np.float64) + 1.0) * span / 2.0
    return np.where(degenerate, lo, x)
