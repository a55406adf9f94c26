"""Domain types, validation, stream alignment and the posterior re-weighting step.

A posterior stream is a T x C matrix whose rows live on the probability
simplex.  A stream set bundles M parallel streams (one per microphone); an
attention schedule assigns each frame a convex weight vector over the M
streams.  Fusion is the weighted sum of the per-stream posterior rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionMismatch, InvalidN, OverlapEmpty

# Absolute tolerance on simplex row sums.  Rows inside the tolerance are
# accepted (classifier outputs carry float noise); rows outside are rejected.
SIMPLEX_ATOL = 1e-6


@dataclass
class PosteriorStream:
    """Per-frame class posteriors of one stream.

    probs: (T, C) float64, rows on the simplex within SIMPLEX_ATOL.
    frame_offset: signed shift (in frames) of this stream's content relative
        to the common time base; frame k of the reference appears at index
        k + frame_offset of this stream.
    """

    probs: np.ndarray
    stream_id: int = 0
    frame_offset: int = 0

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2:
            raise DimensionMismatch("stream probs must be a (T, C) matrix")

    @property
    def num_frames(self) -> int:
        return self.probs.shape[0]

    @property
    def num_classes(self) -> int:
        return self.probs.shape[1]


@dataclass
class StreamSet:
    """M parallel posterior streams sharing a class alphabet."""

    streams: list[PosteriorStream]

    @property
    def num_streams(self) -> int:
        return len(self.streams)

    @property
    def num_classes(self) -> int:
        return self.streams[0].num_classes

    def aligned(self) -> bool:
        return all(s.frame_offset == 0 for s in self.streams) and (
            len({s.num_frames for s in self.streams}) == 1
        )


@dataclass
class AttentionSchedule:
    """Per-frame convex weights over streams: (T, M), rows summing to 1."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise DimensionMismatch("schedule weights must be a (T, M) matrix")

    @property
    def num_frames(self) -> int:
        return self.weights.shape[0]

    @property
    def num_streams(self) -> int:
        return self.weights.shape[1]


def validate_frame(probs: np.ndarray) -> list[str]:
    """Return rule violations for a single posterior row (empty if valid)."""
    probs = np.asarray(probs, dtype=np.float64)
    out = []
    if probs.ndim != 1 or probs.shape[0] < 2:
        out.append("frame must hold at least 2 class probabilities")
        return out
    if not np.all(np.isfinite(probs)):
        out.append("non-finite probability")
    if np.any(probs < 0):
        out.append("negative probability")
    s = float(probs.sum())
    if abs(s - 1.0) > SIMPLEX_ATOL:
        out.append(f"row sum {s:.8f} outside 1 +- {SIMPLEX_ATOL:g}")
    return out


def validate_stream(stream: PosteriorStream) -> list[str]:
    out = []
    if stream.num_frames < 1:
        out.append(f"stream {stream.stream_id}: empty stream")
        return out
    if stream.num_classes < 2:
        out.append(f"stream {stream.stream_id}: needs C >= 2 classes")
        return out
    probs = stream.probs
    bad_finite = ~np.all(np.isfinite(probs), axis=1)
    bad_neg = np.any(probs < 0, axis=1)
    sums = probs.sum(axis=1)
    bad_sum = np.abs(sums - 1.0) > SIMPLEX_ATOL
    for t in np.nonzero(bad_finite | bad_neg | bad_sum)[0]:
        if bad_finite[t]:
            rule = "non-finite probability"
        elif bad_neg[t]:
            rule = "negative probability"
        else:
            rule = f"row sum {sums[t]:.8f} outside 1 +- {SIMPLEX_ATOL:g}"
        out.append(f"stream {stream.stream_id}: frame {t}: {rule}")
    return out


def validate_stream_set(sset: StreamSet) -> list[str]:
    """Validation report for a stream set; empty report means valid."""
    out = []
    if sset.num_streams < 2:
        out.append("stream set needs M >= 2 streams")
        return out
    class_counts = {s.num_classes for s in sset.streams}
    if len(class_counts) > 1:
        out.append(f"class-count mismatch across streams: {sorted(class_counts)}")
    for s in sset.streams:
        out.extend(validate_stream(s))
    return out


def validate_schedule(sched: AttentionSchedule) -> list[str]:
    w = sched.weights
    out = []
    if np.any(w < 0) or np.any(w > 1):
        out.append("schedule entries must lie in [0, 1]")
    sums = w.sum(axis=1)
    for t in np.nonzero(np.abs(sums - 1.0) > SIMPLEX_ATOL)[0]:
        out.append(f"schedule row {t}: sum {sums[t]:.8f} outside 1 +- {SIMPLEX_ATOL:g}")
    return out


def renormalize_rows(mat: np.ndarray) -> np.ndarray:
    """Divide each row by its sum (rows assumed near the simplex already)."""
    return mat / mat.sum(axis=1, keepdims=True)


def overlap_range(sset: StreamSet) -> tuple[int, int]:
    """Common reference-frame range implied by the stream offsets.

    Returns (lo, length): reference frame indices lo .. lo+length-1 are
    covered by every stream.  Raises OverlapEmpty when no frame is shared.
    """
    lo = 0
    hi = None
    for s in sset.streams:
        o = s.frame_offset
        lo = max(lo, -o)
        h = s.num_frames - 1 - o
        hi = h if hi is None else min(hi, h)
    lo = max(lo, 0)
    if hi is None or hi < lo:
        raise OverlapEmpty("stream offsets leave no common frame range")
    return lo, hi - lo + 1


def align_streams(sset: StreamSet) -> StreamSet:
    """Shift each stream by its offset and truncate to the overlap.

    Output streams all carry offset 0 and share length; applying the
    operation twice is a no-op.  Reference frame k of stream i lives at
    index k + offset_i, so the aligned index j maps to reference frame
    lo + j with (lo, length) = overlap_range(sset).
    """
    lo, length = overlap_range(sset)
    out = []
    for s in sset.streams:
        start = lo + s.frame_offset
        out.append(
            replace(s, probs=s.probs[start : start + length].copy(), frame_offset=0)
        )
    return StreamSet(out)


def fuse(sset: StreamSet, sched: AttentionSchedule) -> PosteriorStream:
    """Per-frame convex combination of stream posteriors under the schedule."""
    if not sset.aligned():
        raise DimensionMismatch("fuse requires an aligned stream set (all offsets 0)")
    T = sset.streams[0].num_frames
    if sched.num_frames != T:
        raise DimensionMismatch(
            f"schedule has {sched.num_frames} rows, streams have {T} frames"
        )
    if sched.num_streams != sset.num_streams:
        raise DimensionMismatch(
            f"schedule has {sched.num_streams} columns for {sset.num_streams} streams"
        )
    if len({s.num_classes for s in sset.streams}) > 1:
        raise DimensionMismatch("class-count mismatch across streams")
    stacked = np.stack([s.probs for s in sset.streams])  # (M, T, C)
    fused = np.einsum("tm,mtc->tc", sched.weights, stacked)
    return PosteriorStream(probs=renormalize_rows(fused), stream_id=-1)


def n_best_truncate(sched: AttentionSchedule, n: int) -> AttentionSchedule:
    """Keep the n largest weights per row, zero the rest, renormalize.

    Ties broken toward the lowest stream index; n=1 is winner-takes-all,
    n=M is the identity.
    """
    M = sched.num_streams
    if not 1 <= n <= M:
        raise InvalidN(f"n must be in [1, {M}], got {n}")
    if n == M:
        return AttentionSchedule(sched.weights.copy())
    # Stable sort on descending weight keeps equal weights in index order.
    order = np.argsort(-sched.weights, axis=1, kind="stable")
    keep = order[:, :n]
    mask = np.zeros_like(sched.weights, dtype=bool)
    np.put_along_axis(mask, keep, True, axis=1)
    w = np.where(mask, sched.weights, 0.0)
    return AttentionSchedule(renormalize_rows(w))
