"""Unsupervised stream-reliability monitors built on posteriorgram analysis.

Two families:

* frame-wise inverse-entropy weighting: a frame whose posterior is close to
  uniform (high entropy) carries little evidence, so its stream is
  down-weighted at that frame;
* window-level mean time distance: the average symmetric KL divergence
  between posterior frames spaced by fixed time spans.  Stationary
  distortions flatten temporal dynamics and shrink this value, so the
  stream with the highest score per window is selected outright (binary
  attention).  The "delta" variant only counts frame pairs whose argmax
  class differs, gating the divergences on class change.

All measures use natural logs (nats).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import AttentionSchedule, PosteriorStream, StreamSet
from .errors import WindowTooShort

# Floor inside logs; keeps 0 * log(0) terms finite without moving mass.
LOG_EPS = 1e-10
# Entropy floor applied before inversion so a saturated (one-hot) stream
# yields a large but bounded weight.
ENTROPY_FLOOR = 1e-3

#: Default time spans (frames) for the mean-time-distance measures, covering
#: a few hundred milliseconds at a 10 ms frame rate.
DEFAULT_SPANS = (5, 10, 20, 30, 40, 50)


@dataclass
class MMeasureConfig:
    """Spans and analysis window for the mean-time-distance measures.

    window=None means utterance-level (one window spanning the stream).
    """

    spans: tuple[int, ...] = DEFAULT_SPANS
    window: int | None = None

    def __post_init__(self):
        spans = tuple(int(s) for s in self.spans)
        if not spans:
            raise ValueError("spans must be non-empty")
        if spans[0] < 1 or any(b <= a for a, b in zip(spans, spans[1:])):
            raise ValueError("spans must be >= 1 and strictly increasing")
        self.spans = spans
        if self.window is not None and self.window < max(spans) + 1:
            raise ValueError("window must be >= max(spans) + 1")


@dataclass
class StreamScore:
    stream_id: int
    value: float


def entropy(probs: np.ndarray) -> float:
    """Shannon entropy of one posterior row, in nats."""
    p = np.asarray(probs, dtype=np.float64)
    return float(-(p * np.log(np.maximum(p, LOG_EPS))).sum())


def entropy_rows(mat: np.ndarray) -> np.ndarray:
    """Row-wise Shannon entropy of a (T, C) matrix, in nats."""
    return -(mat * np.log(np.maximum(mat, LOG_EPS))).sum(axis=1)


def weights_from_entropies(entropies: np.ndarray) -> np.ndarray:
    """Normalized inverse entropies, with the entropy floor applied."""
    inv = 1.0 / np.maximum(np.asarray(entropies, dtype=np.float64), ENTROPY_FLOOR)
    return inv / inv.sum(axis=-1, keepdims=True)


def inverse_entropy_weights(frames: list[np.ndarray]) -> np.ndarray:
    """Attention weights for one time instant from M posterior frames."""
    return weights_from_entropies(np.array([entropy(f) for f in frames]))


def symmetric_kld(p: np.ndarray, q: np.ndarray) -> float:
    """Symmetric KL divergence KL(p||q) + KL(q||p), in nats."""
    return float(symmetric_kld_rows(np.atleast_2d(p), np.atleast_2d(q))[0])


def symmetric_kld_rows(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Row-wise symmetric KL divergence between two (N, C) matrices."""
    lp = np.log(np.maximum(P, LOG_EPS))
    lq = np.log(np.maximum(Q, LOG_EPS))
    return ((P - Q) * (lp - lq)).sum(axis=1)


def _window_bounds(T: int, window: int | None) -> list[tuple[int, int]]:
    """Tile [0, T) into analysis windows; a short tail joins the last tile."""
    if window is None or window >= T:
        return [(0, T)]
    starts = list(range(0, T, window))
    bounds = [(s, min(s + window, T)) for s in starts]
    if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] < window:
        last = bounds.pop()
        prev = bounds.pop()
        bounds.append((prev[0], last[1]))
    return bounds


def _mean_time_distance(
    probs: np.ndarray, spans: tuple[int, ...], gate_on_argmax: bool
) -> float:
    """Average pairwise divergence over spans within one window of frames."""
    T = probs.shape[0]
    if T < max(spans) + 1:
        raise WindowTooShort(
            f"window of {T} frames cannot host span {max(spans)}"
        )
    per_span = []
    for d in spans:
        div = symmetric_kld_rows(probs[:-d], probs[d:])
        if gate_on_argmax:
            changed = np.argmax(probs[:-d], axis=1) != np.argmax(probs[d:], axis=1)
            div = div[changed]
            per_span.append(float(div.mean()) if div.size else 0.0)
        else:
            per_span.append(float(div.mean()))
    return float(np.mean(per_span))


def m_measure(stream: PosteriorStream, cfg: MMeasureConfig | None = None) -> StreamScore:
    """Mean time distance of a stream (utterance-level unless windowed).

    With a finite window the per-window values are averaged, weighted by
    window length, so the utterance-level call is the single-window case.
    """
    return _scored(stream, cfg or MMeasureConfig(), gate_on_argmax=False)


def delta_m_measure(
    stream: PosteriorStream, cfg: MMeasureConfig | None = None
) -> StreamScore:
    """Mean time distance counting only frame pairs whose argmax class differs."""
    return _scored(stream, cfg or MMeasureConfig(), gate_on_argmax=True)


def _scored(stream: PosteriorStream, cfg: MMeasureConfig, gate_on_argmax: bool) -> StreamScore:
    bounds = _window_bounds(stream.num_frames, cfg.window)
    vals, lens = [], []
    for a, b in bounds:
        vals.append(_mean_time_distance(stream.probs[a:b], cfg.spans, gate_on_argmax))
        lens.append(b - a)
    value = float(np.average(vals, weights=lens))
    return StreamScore(stream_id=stream.stream_id, value=value)


def binary_window_attention(
    sset: StreamSet, cfg: MMeasureConfig | None = None, measure: str = "m"
) -> AttentionSchedule:
    """One-hot schedule selecting the highest-scoring stream per window.

    measure is "m" or "delta_m".  Ties go to the lowest stream index.
    """
    if measure not in ("m", "delta_m"):
        raise ValueError(f"unknown measure {measure!r}")
    cfg = cfg or MMeasureConfig()
    gate = measure == "delta_m"
    T = sset.streams[0].num_frames
    weights = np.zeros((T, sset.num_streams))
    for a, b in _window_bounds(T, cfg.window):
        scores = [
            _mean_time_distance(s.probs[a:b], cfg.spans, gate) for s in sset.streams
        ]
        winner = int(np.argmax(scores))  # argmax takes the first (lowest) on ties
        weights[a:b, winner] = 1.0
    return AttentionSchedule(weights)


def entropy_attention(sset: StreamSet) -> AttentionSchedule:
    """Frame-wise inverse-entropy attention over an aligned stream set."""
    ent = np.stack([entropy_rows(s.probs) for s in sset.streams], axis=1)  # (T, M)
    return AttentionSchedule(weights_from_entropies(ent))
