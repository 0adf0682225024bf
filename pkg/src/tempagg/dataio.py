"""Feature files, annotation tables, subset lists, checkpoints and synthetic data.

Feature file layout (little endian, 19 byte header then payload)::

    offset  size  field
    0       4     magic b"TAGF"
    4       2     version (u16) = 1
    6       1     modality code (u8): 0 rgb, 1 flow, 2 obj, 3 roi
    7       4     T frames (u32)
    11      4     D feature width (u32)
    15      4     fps (f32)
    19      4*T*D row-major f32 features

Frame k has timestamp k / fps.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import (AnnotationError, BadMagicError, CheckpointError, DataCoverageError,
                     FeatureFileError, ShapeMismatchError, TruncatedFileError)
from .model import Batch, ModelConfig, ModelParams
from .sampler import MODALITIES, FrameFeatureSequence, SamplingConfig, sample
from .trainer import TrainConfig

MAGIC = b"TAGF"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHBIIf")
FEATURE_SUFFIX = ".tagf"

# per-modality widths of the EPIC-KITCHENS-100 features (rgb, flow, obj, roi)
EPIC100_FEATURE_DIMS = {"rgb": 1024, "flow": 1024, "obj": 352, "roi": 1024}
# EPIC-KITCHENS-100 vocabulary sizes
EPIC100_VOCAB = {"verb": 97, "noun": 300, "action": 4025}

ANNOTATION_COLUMNS = ("video_id", "start_sec", "stop_sec", "verb_class", "noun_class",
                      "action_class", "participant_id")
LEVELS = ("verb", "noun", "action")

CHECKPOINT_VERSION = 1


# --- feature files --------------------------------------------------------

def write_features(path, features: np.ndarray, fps: float, modality: str) -> None:
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[0] == 0 or features.shape[1] == 0:
        raise ShapeMismatchError(f"feature matrix must be non-empty T x D, got {features.shape}")
    if modality not in MODALITIES:
        raise FeatureFileError(f"unknown modality {modality!r}")
    if not fps > 0:
        raise FeatureFileError(f"fps must be positive, got {fps}")
    t, d = features.shape
    header = HEADER.pack(MAGIC, FORMAT_VERSION, MODALITIES.index(modality), t, d, fps)
    payload = np.ascontiguousarray(features, dtype="<f4").tobytes()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def write_feature_file(seq: FrameFeatureSequence, path) -> None:
    if seq.fps is None:
        raise FeatureFileError(f"{seq.video_id}: only uniformly sampled sequences (with fps) can be written")
    expected = np.arange(seq.num_frames) / float(np.float32(seq.fps))
    if not np.allclose(seq.timestamps, expected, rtol=0, atol=1e-9):
        raise FeatureFileError(f"{seq.video_id}: timestamps are not k / fps")
    write_features(path, seq.features, seq.fps, seq.modality)


def parse_feature_bytes(raw: bytes, video_id: str) -> FrameFeatureSequence:
    if len(raw) < len(MAGIC) or raw[:4] != MAGIC:
        raise BadMagicError(f"{video_id}: not a feature file (magic {raw[:4]!r})")
    if len(raw) < HEADER.size:
        raise TruncatedFileError(f"{video_id}: header truncated at {len(raw)} bytes")
    _, version, code, t, d, fps = HEADER.unpack_from(raw)
    if version != FORMAT_VERSION:
        raise FeatureFileError(f"{video_id}: unsupported feature file version {version}")
    if code >= len(MODALITIES):
        raise FeatureFileError(f"{video_id}: unknown modality code {code}")
    if t == 0 or d == 0:
        raise ShapeMismatchError(f"{video_id}: declared shape {t} x {d} is empty")
    expected = HEADER.size + 4 * t * d
    if len(raw) < expected:
        raise TruncatedFileError(
            f"{video_id}: payload holds {len(raw) - HEADER.size} bytes, header declares {t} x {d}")
    if len(raw) > expected:
        raise ShapeMismatchError(
            f"{video_id}: {len(raw) - expected} trailing bytes after {t} x {d} payload")
    feats = np.frombuffer(raw, dtype="<f4", count=t * d, offset=HEADER.size).reshape(t, d)
    return FrameFeatureSequence.uniform(video_id, MODALITIES[code], feats.astype(np.float32), float(fps))


def read_feature_file(path) -> FrameFeatureSequence:
    path = Path(path)
    return parse_feature_bytes(path.read_bytes(), path.name.removesuffix(FEATURE_SUFFIX))


def feature_path(root, modality: str, video_id: str) -> Path:
    return Path(root) / modality / f"{video_id}{FEATURE_SUFFIX}"


def load_sequences(root, modality: str, video_ids: Iterable[str]) -> dict[str, FrameFeatureSequence]:
    out = {}
    for vid in sorted(set(video_ids)):
        path = feature_path(root, modality, vid)
        if not path.exists():
            raise DataCoverageError(f"missing feature file for video {vid}: {path}")
        out[vid] = read_feature_file(path)
    return out


# --- annotations ----------------------------------------------------------

@dataclass(frozen=True)
class Annotation:
    segment_id: str
    video_id: str
    start: float
    stop: float
    verb: int
    noun: int
    action: int
    participant: str

    def label(self, level: str) -> int:
        return getattr(self, level)


@dataclass
class AnnotationTable:
    rows: list[Annotation]

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    @property
    def segment_ids(self) -> list[str]:
        return [r.segment_id for r in self.rows]

    @property
    def video_ids(self) -> list[str]:
        return sorted({r.video_id for r in self.rows})

    def labels(self, level: str = "action") -> np.ndarray:
        return np.array([r.label(level) for r in self.rows], dtype=np.int64)

    def action_map(self) -> dict[int, tuple[int, int]]:
        """action -> (verb, noun) as observed in the rows."""
        amap: dict[int, tuple[int, int]] = {}
        for r in self.rows:
            prev = amap.setdefault(r.action, (r.verb, r.noun))
            if prev != (r.verb, r.noun):
                raise AnnotationError(
                    f"action {r.action} maps to both {prev} and {(r.verb, r.noun)}")
        return amap

    def by_id(self) -> dict[str, Annotation]:
        return {r.segment_id: r for r in self.rows}


def load_annotations(path, vocab: dict[str, int] | None = None) -> AnnotationTable:
    """Parse and validate an annotation CSV.

    A leading ``segment_id`` column is optional; without it segment ids are
    ``<video_id>_<row index>``.
    """
    vocab = vocab or {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise AnnotationError(f"{path}: empty annotation file") from None
        has_id = header[:1] == ["segment_id"]
        cols = header[1:] if has_id else header
        if tuple(cols) != ANNOTATION_COLUMNS:
            raise AnnotationError(f"{path}:1: expected columns {ANNOTATION_COLUMNS}, got {tuple(header)}")
        rows, seen = [], set()
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not x.strip() for x in rec):
                continue
            if len(rec) != len(header):
                raise AnnotationError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            sid = rec[0].strip() if has_id else None
            vals = [x.strip() for x in (rec[1:] if has_id else rec)]
            try:
                vid, start, stop = vals[0], float(vals[1]), float(vals[2])
                verb, noun, action = int(vals[3]), int(vals[4]), int(vals[5])
            except ValueError as exc:
                raise AnnotationError(f"{path}:{lineno}: malformed row ({exc})") from None
            if not vid:
                raise AnnotationError(f"{path}:{lineno}: empty video_id")
            if not (math.isfinite(start) and math.isfinite(stop)) or start >= stop:
                raise AnnotationError(f"{path}:{lineno}: start {start} must precede stop {stop}")
            for level, value in zip(LEVELS, (verb, noun, action)):
                limit = vocab.get(level)
                if value < 0 or (limit is not None and value >= limit):
                    raise AnnotationError(
                        f"{path}:{lineno}: {level} class {value} outside [0, {limit or 'inf'})")
            sid = sid or f"{vid}_{lineno - 2}"
            if sid in seen:
                raise AnnotationError(f"{path}:{lineno}: duplicate segment id {sid}")
            seen.add(sid)
            rows.append(Annotation(sid, vid, start, stop, verb, noun, action, vals[6]))
    return AnnotationTable(rows)


def write_annotations(table: AnnotationTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("segment_id",) + ANNOTATION_COLUMNS)
        for r in table:
            w.writerow((r.segment_id, r.video_id, repr(r.start), repr(r.stop), r.verb, r.noun,
                        r.action, r.participant))


def load_action_map(path) -> dict[int, tuple[int, int]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        try:
            return {int(r["action"]): (int(r["verb"]), int(r["noun"])) for r in reader}
        except (KeyError, ValueError, TypeError) as exc:
            raise AnnotationError(f"{path}: malformed action map ({exc})") from None


def write_action_map(amap: dict[int, tuple[int, int]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("action", "verb", "noun"))
        for a in sorted(amap):
            w.writerow((a, *amap[a]))


# --- evaluation subsets ---------------------------------------------------

@dataclass
class SubsetLists:
    unseen_participants: frozenset[str] = frozenset()
    tail_classes: dict[str, frozenset[int]] = field(default_factory=dict)

    def validate(self, table: AnnotationTable) -> None:
        known = {r.participant for r in table}
        unknown = sorted(self.unseen_participants - known)
        if unknown:
            raise AnnotationError(f"unseen participants not present in annotations: {unknown}")
        for level in self.tail_classes:
            if level not in LEVELS:
                raise AnnotationError(f"tail classes given for unknown level {level!r}")


def load_subsets(path) -> SubsetLists:
    """JSON: {"unseen_participants": [...], "tail_classes": {"verb": [...], ...}}."""
    try:
        raw = json.loads(Path(path).read_text())
        return SubsetLists(frozenset(str(p) for p in raw.get("unseen_participants", [])),
                           {k: frozenset(int(c) for c in v)
                            for k, v in raw.get("tail_classes", {}).items()})
    except (json.JSONDecodeError, AttributeError, TypeError, ValueError) as exc:
        raise AnnotationError(f"{path}: malformed subset file ({exc})") from None


def write_subsets(subsets: SubsetLists, path) -> None:
    raw = {"unseen_participants": sorted(subsets.unseen_participants),
           "tail_classes": {k: sorted(v) for k, v in subsets.tail_classes.items()}}
    Path(path).write_text(json.dumps(raw, indent=2) + "\n")


# --- dataset assembly -----------------------------------------------------

def assemble(table: AnnotationTable, sequences: dict[str, FrameFeatureSequence],
             cfg: SamplingConfig, level: str = "action") -> tuple[Batch, np.ndarray]:
    """Sample every annotated segment; raises DataCoverageError listing all bad segments."""
    samples, bad = [], []
    for r in table:
        seq = sequences.get(r.video_id)
        if seq is None:
            bad.append(f"{r.segment_id} (no features for {r.video_id})")
            continue
        try:
            samples.append(sample(seq, cfg, r.start, r.stop))
        except DataCoverageError as exc:
            bad.append(f"{r.segment_id} ({exc})")
    if bad:
        raise DataCoverageError(f"{len(bad)} segment(s) lack coverage: " + "; ".join(bad[:20]))
    if not samples:
        raise DataCoverageError("annotation table is empty")
    return Batch.from_samples(samples), table.labels(level)


# --- checkpoints ----------------------------------------------------------

def _sampling_from_dict(d: dict) -> SamplingConfig:
    d = dict(d)
    d["spanning_scales"] = tuple(d["spanning_scales"])
    d["recent_starts"] = tuple(d["recent_starts"])
    d["recent_windows"] = tuple(tuple(w) for w in d["recent_windows"])
    return SamplingConfig(**d)


def _model_config_from_dict(d: dict) -> ModelConfig:
    return ModelConfig(**{**d, "spanning_scales": tuple(d["spanning_scales"])})


@dataclass
class Checkpoint:
    params: ModelParams
    train: TrainConfig
    sampling: SamplingConfig
    rng_state: dict | None = None
    epoch: int = -1
    extra: dict = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    meta = {
        "format": "tempagg-checkpoint",
        "version": CHECKPOINT_VERSION,
        "model": asdict(ckpt.params.config),
        "train": asdict(ckpt.train),
        "sampling": asdict(ckpt.sampling),
        "rng_state": ckpt.rng_state,
        "epoch": ckpt.epoch,
        "extra": ckpt.extra,
        "names": list(ckpt.params.tensors),
    }
    arrays = {f"param/{k}": v for k, v in ckpt.params.state_dict().items()}
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(z["meta"].tobytes().decode())
            if meta.get("format") != "tempagg-checkpoint":
                raise CheckpointError(f"{path}: not a tempagg checkpoint")
            if meta.get("version") != CHECKPOINT_VERSION:
                raise CheckpointError(f"{path}: unsupported checkpoint version {meta.get('version')}")
            state = {name: z[f"param/{name}"] for name in meta["names"]}
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from None
    params = ModelParams(_model_config_from_dict(meta["model"]))
    params.load_state_dict(state)
    return Checkpoint(params, TrainConfig(**meta["train"]), _sampling_from_dict(meta["sampling"]),
                      meta.get("rng_state"), meta.get("epoch", -1), meta.get("extra", {}))


# --- synthetic data -------------------------------------------------------

SYNTH_PERIOD = 13.0       # seconds of footage per segment slot
SYNTH_SEGMENT_AT = 8.0    # segment start offset inside its slot
SYNTH_DURATION = 3.0
SYNTH_LEAD = 3.0          # cue starts this long before the segment
SYNTH_NOISE = 0.5         # background features are uniform in [0, SYNTH_NOISE)
SYNTH_CUE = 1.0           # amplitude added to the class block during the cue


@dataclass
class SyntheticData:
    sequences: list[FrameFeatureSequence]
    annotations: AnnotationTable
    action_map: dict[int, tuple[int, int]]
    num_classes: int
    val_videos: int = 0

    def split(self) -> tuple[AnnotationTable, AnnotationTable, SubsetLists]:
        """(train, val, subsets). Tail classes are the rarest third of training labels per level."""
        val_ids = {s.video_id for s in self.sequences[len(self.sequences) - self.val_videos:]}
        val_ids = val_ids if self.val_videos else set()
        train = AnnotationTable([r for r in self.annotations if r.video_id not in val_ids])
        val = AnnotationTable([r for r in self.annotations if r.video_id in val_ids])
        seen = {r.participant for r in train}
        unseen = frozenset(r.participant for r in val if r.participant not in seen)
        tail = {}
        for level in LEVELS:
            labels = train.labels(level)
            classes = sorted({self.action_map[a][LEVELS.index(level)] if level != "action" else a
                              for a in self.action_map})
            counts = sorted(classes, key=lambda c: (int((labels == c).sum()), c))
            tail[level] = frozenset(counts[:max(1, len(counts) // 3)])
        return train, val, SubsetLists(unseen, tail)

    def write(self, out_dir) -> dict[str, str]:
        """Write feature files, annotations and the action map under ``out_dir``; return a sha256 manifest."""
        out = Path(out_dir)
        files = []
        for seq in self.sequences:
            p = feature_path(out / "features", seq.modality, seq.video_id)
            write_feature_file(seq, p)
            files.append(p)
        write_annotations(self.annotations, out / "annotations.csv")
        write_action_map(self.action_map, out / "actions.csv")
        files += [out / "annotations.csv", out / "actions.csv"]
        if self.val_videos:
            train, val, subsets = self.split()
            write_annotations(train, out / "train.csv")
            write_annotations(val, out / "val.csv")
            write_subsets(subsets, out / "subsets.json")
            files += [out / "train.csv", out / "val.csv", out / "subsets.json"]
        return {str(p.relative_to(out)): hashlib.sha256(p.read_bytes()).hexdigest() for p in files}


def synthetic_action_map(num_classes: int) -> dict[int, tuple[int, int]]:
    n_verbs = math.ceil(math.sqrt(num_classes))
    return {c: (c % n_verbs, c // n_verbs) for c in range(num_classes)}


def class_block(c: int, num_classes: int, dim: int) -> slice:
    m = dim // num_classes
    return slice(c * m, (c + 1) * m)


def generate_synthetic(num_classes: int, num_videos: int, fps: float = 10.0, dim: int = 32,
                       seed: int = 0, segments_per_video: int = 1, modality: str = "rgb",
                       participants: int = 4, val_videos: int = 0) -> SyntheticData:
    """Videos whose segments are labelled by an elevated block of feature coordinates.

    Each segment occupies slot k of its video: it starts at k*13+8 s and lasts
    3 s. From 3 s before the start until the stop, coordinates
    ``[c*m, (c+1)*m)`` (m = dim // C) of every frame are raised by 1.0 over a
    uniform [0, 0.5) background. Max-pooling any window that overlaps the cue
    therefore recovers the class exactly (see ``oracle_label``).

    The last ``val_videos`` videos form the validation split; every second
    one is recorded by a participant never seen in training.
    """
    if num_classes < 2:
        raise ValueError("synthetic data needs at least 2 classes")
    if dim < num_classes:
        raise ValueError(f"dim {dim} too small for {num_classes} class blocks")
    if num_videos < 1 or segments_per_video < 1:
        raise ValueError("need at least one video and one segment per video")
    rng = np.random.default_rng(seed)
    amap = synthetic_action_map(num_classes)
    n_frames = int(round(segments_per_video * SYNTH_PERIOD * fps))
    ts = np.arange(n_frames) / float(np.float32(fps))
    sequences, rows = [], []
    for v in range(num_videos):
        vid = f"video_{v:04d}"
        feats = rng.uniform(0.0, SYNTH_NOISE, size=(n_frames, dim)).astype(np.float32)
        labels = rng.integers(num_classes, size=segments_per_video)
        in_val = v >= num_videos - val_videos
        who = f"U{v:04d}" if in_val and v % 2 else f"P{v % participants:02d}"
        for k, c in enumerate(labels):
            start = k * SYNTH_PERIOD + SYNTH_SEGMENT_AT
            stop = start + SYNTH_DURATION
            cue = (ts >= start - SYNTH_LEAD) & (ts <= stop)
            feats[cue, class_block(int(c), num_classes, dim)] += SYNTH_CUE
            verb, noun = amap[int(c)]
            rows.append(Annotation(f"{vid}_{k}", vid, start, stop, verb, noun, int(c), who))
        sequences.append(FrameFeatureSequence.uniform(vid, modality, feats, float(np.float32(fps))))
    return SyntheticData(sequences, AnnotationTable(rows), amap, num_classes, val_videos)


def oracle_label(seq: FrameFeatureSequence, start: float, stop: float, num_classes: int) -> int:
    """Invert the generator: max-pool frames in [start, stop) and pick the hottest class block."""
    ts = seq.timestamps
    pooled = seq.features[(ts >= start) & (ts < stop)].max(axis=0)
    scores = [pooled[class_block(c, num_classes, seq.dim)].mean() for c in range(num_classes)]
    return int(np.argmax(scores))
