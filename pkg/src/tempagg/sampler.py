"""Recent and spanning snippet sampling.

A snippet is a contiguous chunk of a video whose frame features are
max-pooled into one vector. ``spanning`` sets cover the long-term scope at a
given granularity K; ``recent`` sets cover short windows ending at the
observation boundary (anticipation), expanded windows around a segment
(recognition), or thirds of a whole video (activity recognition).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, NamedTuple

import numpy as np

from .errors import DataCoverageError

MODALITIES = ("rgb", "flow", "obj", "roi")
TASKS = ("anticipation", "recognition", "activity")


@dataclass
class FrameFeatureSequence:
    video_id: str
    modality: str
    timestamps: np.ndarray
    features: np.ndarray
    fps: float | None = None
    # set to a list to record every frame index read by the samplers
    access_log: list[int] | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.features = np.asarray(self.features)
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}; expected one of {MODALITIES}")
        if self.features.ndim != 2 or self.features.shape[0] == 0 or self.features.shape[1] == 0:
            raise ValueError(f"features must be a non-empty T x D matrix, got {self.features.shape}")
        if self.timestamps.shape != (self.features.shape[0],):
            raise ValueError(f"{len(self.timestamps)} timestamps for {self.features.shape[0]} frames")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError(f"timestamps of {self.video_id} are not strictly increasing")

    @classmethod
    def uniform(cls, video_id: str, modality: str, features, fps: float) -> "FrameFeatureSequence":
        features = np.asarray(features)
        ts = np.arange(features.shape[0], dtype=np.float64) / float(fps)
        return cls(video_id, modality, ts, features, fps=float(fps))

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def frame_period(self) -> float:
        if self.fps:
            return 1.0 / self.fps
        if self.num_frames > 1:
            return float(np.median(np.diff(self.timestamps)))
        return 1.0

    @property
    def span(self) -> tuple[float, float]:
        """Covered footage: first timestamp to one frame period past the last."""
        return float(self.timestamps[0]), float(self.timestamps[-1]) + self.frame_period

    def rows(self, idx) -> np.ndarray:
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        if self.access_log is not None:
            self.access_log.extend(int(i) for i in idx)
        return self.features[idx]


@dataclass
class SnippetSet:
    vectors: np.ndarray
    extents: list[tuple[float, float]]
    kind: Literal["recent", "spanning"]
    scale: int
    clipped: bool = False


@dataclass(frozen=True)
class SamplingConfig:
    """Where recent and spanning snippets are drawn from for one task.

    anticipation: ``recent_starts`` are offsets (s) from the observation
    time t; ``spanning_scope`` is the number of seconds before t.
    recognition: ``recent_windows`` are (start, end) offsets added to the
    segment bounds; ``spanning_scope`` is the margin around the segment.
    activity: ``recent_partitions`` equal parts of the video; the spanning
    scope is the whole video (``spanning_scope=None``).
    """

    task: str
    k_recent: int
    spanning_scales: tuple[int, ...]
    spanning_scope: float | None
    recent_starts: tuple[float, ...] = ()
    recent_windows: tuple[tuple[float, float], ...] = ()
    recent_partitions: int = 0
    anticipation_gap: float = 1.0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.k_recent < 1:
            raise ValueError("k_recent must be >= 1")
        if not self.spanning_scales or min(self.spanning_scales) < 1:
            raise ValueError("spanning scales must be a non-empty list of counts >= 1")
        if len(set(self.spanning_scales)) != len(self.spanning_scales):
            raise ValueError(f"spanning scales must be distinct, got {self.spanning_scales}")
        if self.task == "anticipation":
            if not self.recent_starts or max(self.recent_starts) >= 0:
                raise ValueError("anticipation recent starts must be negative offsets from t")
            if self.spanning_scope is None or self.spanning_scope <= 0:
                raise ValueError("anticipation needs a positive spanning scope in seconds")
        elif self.task == "recognition":
            if not self.recent_windows or any(a > b for a, b in self.recent_windows):
                raise ValueError("recognition windows need start offset <= end offset")
            if self.spanning_scope is None or self.spanning_scope < 0:
                raise ValueError("recognition needs a non-negative spanning margin")
        elif self.recent_partitions < 1:
            raise ValueError("activity recognition needs recent_partitions >= 1")

    @property
    def n_recent(self) -> int:
        if self.task == "anticipation":
            return len(self.recent_starts)
        if self.task == "recognition":
            return len(self.recent_windows)
        return self.recent_partitions


EPIC100_ANTICIPATION = SamplingConfig(
    task="anticipation", k_recent=2, spanning_scales=(2, 3, 5), spanning_scope=6.0,
    recent_starts=(-1.6, -1.2, -0.8, -0.4), anticipation_gap=1.0)

EPIC100_RECOGNITION = SamplingConfig(
    task="recognition", k_recent=5, spanning_scales=(2, 3, 5), spanning_scope=6.0,
    recent_windows=((0.0, 0.0), (-1.0, 1.0), (-2.0, 2.0), (-3.0, 3.0)))

BREAKFAST_ACTIVITY = SamplingConfig(
    task="activity", k_recent=5, spanning_scales=(10, 15, 20), spanning_scope=None,
    recent_partitions=3)


class Sample(NamedTuple):
    recent: np.ndarray                  # n_recent x K_R x D
    spanning: tuple[np.ndarray, ...]    # one K x D matrix per spanning scale


def snippet_edges(start: float, end: float, k: int) -> np.ndarray:
    edges = start + (end - start) * np.arange(k + 1) / k
    edges[-1] = end
    return edges


def pool_snippets(seq: FrameFeatureSequence, scope: tuple[float, float], k: int,
                  kind: Literal["recent", "spanning"] = "spanning",
                  closed_end: bool = True) -> SnippetSet:
    """Split ``scope`` into ``k`` equal parts and max-pool the frames of each.

    Frame membership is [a, b) per part; the last part is closed unless
    ``closed_end`` is False. A part with no frames borrows the in-scope frame
    nearest its midpoint (earlier frame on ties).
    """
    start, end = float(scope[0]), float(scope[1])
    if not start < end:
        raise ValueError(f"scope start must precede end, got {scope}")
    if k < 1:
        raise ValueError(f"snippet count must be >= 1, got {k}")
    ts = seq.timestamps
    lo = int(np.searchsorted(ts, start, side="left"))
    hi = int(np.searchsorted(ts, end, side="right" if closed_end else "left"))
    if hi <= lo:
        raise DataCoverageError(f"no frames of {seq.video_id} in scope ({start:.3f}, {end:.3f})")
    edges = snippet_edges(start, end, k)
    cuts = np.searchsorted(ts[lo:hi], edges[1:-1], side="left") + lo
    bounds = np.concatenate([[lo], cuts, [hi]])
    vectors = np.empty((k, seq.dim), dtype=seq.features.dtype)
    for j in range(k):
        a, b = bounds[j], bounds[j + 1]
        if b > a:
            vectors[j] = seq.rows(np.arange(a, b)).max(axis=0)
        else:
            mid = 0.5 * (edges[j] + edges[j + 1])
            nearest = lo + int(np.argmin(np.abs(ts[lo:hi] - mid)))
            vectors[j] = seq.rows(nearest)[0]
    extents = [(float(edges[j]), float(edges[j + 1])) for j in range(k)]
    return SnippetSet(vectors, extents, kind, k)


def _clip(window: tuple[float, float], span: tuple[float, float]) -> tuple[tuple[float, float], bool]:
    a, b = max(window[0], span[0]), min(window[1], span[1])
    return (a, b), (a, b) != tuple(window)


def sample_anticipation(seq: FrameFeatureSequence, action_start: float,
                        cfg: SamplingConfig) -> tuple[list[SnippetSet], list[SnippetSet]]:
    """Snippets observed up to t = action_start - gap. Frames at or after t are never read."""
    t = action_start - cfg.anticipation_gap
    video_start = seq.span[0]
    if t <= 0 or t <= video_start:
        raise DataCoverageError(
            f"{seq.video_id}: observation time {t:.3f}s leaves no history before the action at "
            f"{action_start:.3f}s")
    span_scope, span_clipped = _clip((t - cfg.spanning_scope, t), (video_start, t))
    spanning = []
    for k in cfg.spanning_scales:
        s = pool_snippets(seq, span_scope, k, "spanning", closed_end=False)
        s.clipped = span_clipped
        spanning.append(s)
    recent = []
    for off in cfg.recent_starts:
        scope, clipped = _clip((t + off, t), (video_start, t))
        r = pool_snippets(seq, scope, cfg.k_recent, "recent", closed_end=False)
        r.clipped = clipped
        recent.append(r)
    return recent, spanning


def sample_recognition(seq: FrameFeatureSequence, segment: tuple[float, float],
                       cfg: SamplingConfig) -> tuple[list[SnippetSet], list[SnippetSet]]:
    s, e = float(segment[0]), float(segment[1])
    if not s < e:
        raise ValueError(f"segment start must precede end, got {segment}")
    ts = seq.timestamps
    if not np.any((ts >= s) & (ts <= e)):
        raise DataCoverageError(f"no frames of {seq.video_id} inside segment ({s:.3f}, {e:.3f})")
    span = seq.span
    recent = []
    for da, db in cfg.recent_windows:
        scope, clipped = _clip((s + da, e + db), span)
        r = pool_snippets(seq, scope, cfg.k_recent, "recent")
        r.clipped = clipped
        recent.append(r)
    margin = cfg.spanning_scope
    scope, clipped = _clip((s - margin, e + margin), span)
    spanning = []
    for k in cfg.spanning_scales:
        sp = pool_snippets(seq, scope, k, "spanning")
        sp.clipped = clipped
        spanning.append(sp)
    return recent, spanning


def sample_activity(seq: FrameFeatureSequence,
                    cfg: SamplingConfig) -> tuple[list[SnippetSet], list[SnippetSet]]:
    start, end = seq.span
    edges = snippet_edges(start, end, cfg.recent_partitions)
    recent = [pool_snippets(seq, (edges[p], edges[p + 1]), cfg.k_recent, "recent")
              for p in range(cfg.recent_partitions)]
    spanning = [pool_snippets(seq, (start, end), k, "spanning") for k in cfg.spanning_scales]
    return recent, spanning


def sample(seq: FrameFeatureSequence, cfg: SamplingConfig, start: float | None = None,
           stop: float | None = None) -> Sample:
    """Sample for ``cfg.task`` and stack the snippet sets into fixed-shape arrays."""
    if cfg.task == "anticipation":
        recent, spanning = sample_anticipation(seq, start, cfg)
    elif cfg.task == "recognition":
        recent, spanning = sample_recognition(seq, (start, stop), cfg)
    else:
        recent, spanning = sample_activity(seq, cfg)
    return Sample(np.stack([r.vectors for r in recent]), tuple(s.vectors for s in spanning))
