"""Every on-disk format the pipeline reads or writes.

Binary formats are little-endian and fully specified by their header, so a
write/read round trip is bit-exact and corrupt files fail loudly:

* feature file   -- magic ``M2DT``, u32 version=1, u32 n_clips, u32 dim,
                    then n_clips*dim float32 row-major. Query embeddings use
                    the same layout with n_clips=1.
* checkpoint     -- magic ``M2DP``, u32 version=1, u32 tensor count, then per
                    tensor: u16 name length, UTF-8 name, u8 rank, u32 per
                    dimension, float32 payload. A ``<path>.cfg`` text sidecar
                    echoes the model/train configuration as key=value lines.

Text formats are line-oriented and diffable: tab-separated annotations and
predictions, JSON-lines detections and tubes, key=value config files, and a
``epoch,mean_loss`` CSV training log.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .errors import (
    BadMagicError,
    FormatError,
    InvariantError,
    ParseError,
    TruncatedPayloadError,
)
from .types import (
    ClipFeatureSequence,
    DatasetManifest,
    Detection,
    GroundingSample,
    QueryRecord,
    Tube,
)

FEATURE_MAGIC = b"M2DT"
PARAMS_MAGIC = b"M2DP"
FORMAT_VERSION = 1


# -- binary feature matrices -------------------------------------------------

def write_features(seq: ClipFeatureSequence, path) -> None:
    data = np.ascontiguousarray(seq.data, dtype="<f4")
    header = FEATURE_MAGIC + struct.pack("<III", FORMAT_VERSION, seq.n_clips, seq.dim)
    Path(path).write_bytes(header + data.tobytes())


def load_features(path, video_id: Optional[str] = None) -> ClipFeatureSequence:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != FEATURE_MAGIC:
        raise BadMagicError("%s: not a feature file" % path)
    if len(raw) < 16:
        raise TruncatedPayloadError("%s: header cut short" % path)
    version, n, d = struct.unpack("<III", raw[4:16])
    if version != FORMAT_VERSION:
        raise FormatError("%s: unsupported version %d" % (path, version))
    expected = 16 + n * d * 4
    if len(raw) < expected:
        raise TruncatedPayloadError(
            "%s: payload needs %d bytes, file has %d" % (path, expected - 16, len(raw) - 16)
        )
    if len(raw) > expected:
        raise FormatError("%s: %d trailing bytes" % (path, len(raw) - expected))
    data = np.frombuffer(raw[16:], dtype="<f4").reshape(n, d)
    if not np.all(np.isfinite(data)):
        raise InvariantError("%s: non-finite value in payload" % path)
    if video_id is None:
        video_id = Path(path).stem
    return ClipFeatureSequence(video_id, data.copy())


def write_embedding(query: QueryRecord, path) -> None:
    write_features(ClipFeatureSequence(query.query_id, query.embedding.reshape(1, -1)), path)


def load_embedding(path) -> np.ndarray:
    return load_features(path).data.reshape(-1)


# -- annotations -------------------------------------------------------------

ANNOTATION_FIELDS = ("video_id", "query_id", "tau_s", "tau_e",
                     "frame_rate", "subject", "text")


def _check_field(value: str, name: str) -> str:
    if "\t" in value or "\n" in value or "\r" in value:
        raise InvariantError("annotation field %r may not contain tabs or newlines" % name)
    return value


def write_annotations(samples: List[GroundingSample], path) -> None:
    lines = []
    for s in samples:
        subject = s.query.subject_override or "-"
        lines.append("\t".join([
            _check_field(s.features.video_id, "video_id"),
            _check_field(s.query.query_id, "query_id"),
            str(s.gt_start),
            str(s.gt_end),
            repr(float(s.frame_rate)),
            _check_field(subject, "subject"),
            _check_field(s.query.text, "text"),
        ]))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_annotation_rows(path) -> List[dict]:
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != len(ANNOTATION_FIELDS):
            raise ParseError(
                "expected %d tab-separated fields, got %d"
                % (len(ANNOTATION_FIELDS), len(parts)), line=lineno,
            )
        row = dict(zip(ANNOTATION_FIELDS, parts))
        try:
            row["tau_s"] = int(row["tau_s"])
            row["tau_e"] = int(row["tau_e"])
            row["frame_rate"] = float(row["frame_rate"])
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from exc
        if row["tau_s"] < 1 or row["tau_e"] < row["tau_s"]:
            raise ParseError(
                "bad ground-truth span [%d, %d]" % (row["tau_s"], row["tau_e"]),
                line=lineno,
            )
        if row["frame_rate"] <= 0:
            raise ParseError("frame rate must be positive", line=lineno)
        rows.append(row)
    return rows


def load_annotations(path, videos_dir, queries_dir) -> List[GroundingSample]:
    """Parse an annotation file and attach the referenced binary features.

    Ground-truth spans are validated against the video's clip count here,
    since the text record alone cannot know it.
    """
    videos_dir = Path(videos_dir)
    queries_dir = Path(queries_dir)
    feature_cache: Dict[str, ClipFeatureSequence] = {}
    samples = []
    for row in read_annotation_rows(path):
        vid = row["video_id"]
        if vid not in feature_cache:
            feature_cache[vid] = load_features(videos_dir / (vid + ".m2dt"), vid)
        feats = feature_cache[vid]
        if row["tau_e"] > feats.n_clips:
            raise InvariantError(
                "ground truth end %d beyond %d clips of %r"
                % (row["tau_e"], feats.n_clips, vid)
            )
        query = QueryRecord(
            row["query_id"],
            load_embedding(queries_dir / (row["query_id"] + ".m2dt")),
            text=row["text"],
            subject_override=None if row["subject"] == "-" else row["subject"],
        )
        samples.append(GroundingSample(feats, query, row["tau_s"],
                                       row["tau_e"], row["frame_rate"]))
    return samples


# -- dataset directories -----------------------------------------------------

def save_manifest(manifest: DatasetManifest, root) -> None:
    """Lay a manifest out as videos/, queries/, <split>.tsv and meta.txt."""
    root = Path(root)
    (root / "videos").mkdir(parents=True, exist_ok=True)
    (root / "queries").mkdir(parents=True, exist_ok=True)
    seen_videos = set()
    seen_queries = set()
    for s in manifest.samples:
        if s.features.video_id not in seen_videos:
            write_features(s.features, root / "videos" / (s.features.video_id + ".m2dt"))
            seen_videos.add(s.features.video_id)
        if s.query.query_id not in seen_queries:
            write_embedding(s.query, root / "queries" / (s.query.query_id + ".m2dt"))
            seen_queries.add(s.query.query_id)
    write_annotations(manifest.samples, root / (manifest.split + ".tsv"))
    meta = root / "meta.txt"
    entries = read_config(meta) if meta.exists() else {}
    entries["seed.%s" % manifest.split] = str(manifest.seed)
    write_config(entries, meta)


def load_manifest(root, split: str) -> DatasetManifest:
    root = Path(root)
    samples = load_annotations(root / (split + ".tsv"), root / "videos", root / "queries")
    meta = root / "meta.txt"
    seed = 0
    if meta.exists():
        seed = int(read_config(meta).get("seed.%s" % split, 0))
    return DatasetManifest(samples, split=split, seed=seed)


# -- parameter checkpoints ---------------------------------------------------

def save_params(arrays: Dict[str, np.ndarray], path,
                config: Optional[dict] = None) -> None:
    chunks = [PARAMS_MAGIC, struct.pack("<II", FORMAT_VERSION, len(arrays))]
    for name, arr in arrays.items():
        encoded = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack("<%dI" % arr.ndim, *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))
    if config is not None:
        write_config({k: str(v) for k, v in config.items()},
                     Path(str(path) + ".cfg"))


def load_params(path) -> Dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != PARAMS_MAGIC:
        raise BadMagicError("%s: not a checkpoint file" % path)
    if len(raw) < 12:
        raise TruncatedPayloadError("%s: header cut short" % path)
    version, count = struct.unpack("<II", raw[4:12])
    if version != FORMAT_VERSION:
        raise FormatError("%s: unsupported version %d" % (path, version))
    offset = 12
    out: Dict[str, np.ndarray] = {}

    def take(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(raw):
            raise TruncatedPayloadError("%s: tensor record cut short" % path)
        chunk = raw[offset : offset + n]
        offset += n
        return chunk

    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack("<%dI" % rank, take(4 * rank)) if rank else ()
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        data = np.frombuffer(take(size * 4), dtype="<f4").reshape(shape)
        if not np.all(np.isfinite(data)):
            raise InvariantError("%s: non-finite value in tensor %r" % (path, name))
        out[name] = data.copy()
    if offset != len(raw):
        raise FormatError("%s: %d trailing bytes" % (path, len(raw) - offset))
    return out


def load_checkpoint_config(path) -> dict:
    sidecar = Path(str(path) + ".cfg")
    if not sidecar.exists():
        raise FormatError("missing checkpoint sidecar %s" % sidecar)
    return read_config(sidecar)


# -- temporal predictions ----------------------------------------------------

def write_predictions(rows, path) -> None:
    """Rows of (video_id, query_id, start_clip, end_clip, score)."""
    lines = []
    for video_id, query_id, start, end, score in rows:
        lines.append("%s\t%s\t%d\t%d\t%s" % (video_id, query_id, start, end,
                                             repr(float(score))))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_predictions(path) -> List[tuple]:
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise ParseError("expected 5 fields, got %d" % len(parts), line=lineno)
        try:
            rows.append((parts[0], parts[1], int(parts[2]), int(parts[3]),
                         float(parts[4])))
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from exc
    return rows


# -- detections and tubes (JSON lines) ----------------------------------------

def write_detections(frames, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for frame in frames:
            fh.write(json.dumps({
                "video_id": frame.video_id,
                "frame_idx": frame.frame_idx,
                "detections": [
                    {"box": list(d.box), "score": d.score, "text": d.text}
                    for d in frame.detections
                ],
            }) + "\n")


def load_detections(path) -> Dict[str, Dict[int, List[Detection]]]:
    """Detections per video, per 0-based frame index."""
    out: Dict[str, Dict[int, List[Detection]]] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            dets = [Detection(tuple(d["box"]), float(d["score"]), d.get("text", ""))
                    for d in obj["detections"]]
            frame = int(obj["frame_idx"])
            video = obj["video_id"]
        except (KeyError, ValueError, TypeError) as exc:
            raise ParseError(str(exc), line=lineno) from exc
        out.setdefault(video, {})[frame] = dets
    return out


def write_tubes(tubes: List[Tube], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in tubes:
            fh.write(json.dumps({
                "video_id": t.video_id,
                "query_id": t.query_id,
                "start_frame": t.start_frame,
                "end_frame": t.end_frame,
                "boxes": [list(b) for b in t.boxes],
            }) + "\n")


def load_tubes(path) -> List[Tube]:
    tubes = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            tubes.append(Tube(
                obj["video_id"],
                int(obj["start_frame"]),
                int(obj["end_frame"]),
                [tuple(b) for b in obj["boxes"]],
                query_id=obj.get("query_id", ""),
            ))
        except (KeyError, ValueError, TypeError, InvariantError) as exc:
            raise ParseError(str(exc), line=lineno) from exc
    return tubes


# -- small text helpers --------------------------------------------------------

def load_lexicon(path) -> frozenset:
    nouns = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        word = line.strip().lower()
        if word:
            nouns.add(word)
    if not nouns:
        raise InvariantError("lexicon %s is empty" % path)
    return frozenset(nouns)


def write_lexicon(nouns, path) -> None:
    Path(path).write_text("\n".join(sorted(nouns)) + "\n", encoding="utf-8")


def read_config(path) -> Dict[str, str]:
    """key=value lines; blank lines and '#' comments are ignored."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ParseError("expected key=value", line=lineno)
        key, value = stripped.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def write_config(entries: Dict[str, str], path) -> None:
    lines = ["%s=%s" % (k, v) for k, v in entries.items()]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def write_loss_log(losses, path) -> None:
    lines = ["epoch,mean_loss"]
    for epoch, loss in enumerate(losses):
        lines.append("%d,%s" % (epoch, repr(float(loss))))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
