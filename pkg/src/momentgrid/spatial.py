"""Second stage: pick one box per frame inside the grounded segment.

Detections come from an external referring detector as (box, score, text)
triples per frame. The rules: find the query's subject noun, drop every
detection whose grounding text lacks that subject or mentions more than one
person, keep the longest remaining grounding text, and fill frames that end
up empty by interpolating between (or copying) neighboring selections.
"""

from __future__ import annotations

import string
from typing import Dict, List, Optional, Tuple

from .errors import InvariantError, NoDetectionsError, SubjectNotFoundError
from .types import Detection, FrameDetections, MomentPrediction, QueryRecord, Tube

DEFAULT_PERSON_NOUNS = frozenset({
    "man", "men", "woman", "women", "person", "people", "boy", "boys",
    "girl", "girls", "lady", "ladies", "guy", "guys", "child", "children",
    "kid", "kids", "gentleman", "male", "female", "adult", "teenager",
    "player", "worker", "waiter", "waitress", "policeman", "officer",
})


def tokenize(text: str) -> List[str]:
    """Lowercased whitespace tokens with surrounding punctuation stripped."""
    out = []
    for raw in text.lower().split():
        tok = raw.strip(string.punctuation)
        if tok:
            out.append(tok)
    return out


def extract_subject(query: QueryRecord, lexicon=DEFAULT_PERSON_NOUNS) -> str:
    """The annotated subject if present, else the first person noun of the
    query text."""
    if query.subject_override:
        return query.subject_override.lower()
    for tok in tokenize(query.text):
        if tok in lexicon:
            return tok
    raise SubjectNotFoundError(
        "no person noun found in query %r (%r)" % (query.query_id, query.text)
    )


def count_persons(text: str, lexicon=DEFAULT_PERSON_NOUNS) -> int:
    """Number of person-noun token occurrences, duplicates included."""
    return sum(1 for tok in tokenize(text) if tok in lexicon)


def filter_detections(frame: FrameDetections, subject: str,
                      lexicon=DEFAULT_PERSON_NOUNS) -> List[Detection]:
    """Keep detections whose grounding text contains ``subject`` as a whole
    token and mentions at most one person. Order is preserved."""
    kept = []
    for det in frame.detections:
        toks = tokenize(det.text)
        if subject in toks and count_persons(det.text, lexicon) <= 1:
            kept.append(det)
    return kept


def select_box(candidates: List[Detection]) -> Optional[Detection]:
    """The detection with the longest grounding text; ties break to the
    higher score, then to the earliest list position."""
    best = None
    for det in candidates:
        if best is None:
            best = det
            continue
        if len(det.text) > len(best.text):
            best = det
        elif len(det.text) == len(best.text) and det.score > best.score:
            best = det
    return best


def _lerp_box(b0, b1, w: float):
    return tuple(float(a + w * (b - a)) for a, b in zip(b0, b1))


def assemble_tube(video_id: str, segment: Tuple[int, int],
                  selections: Dict[int, Optional[tuple]],
                  fallback: Optional[Dict[int, List[Detection]]] = None,
                  query_id: str = "") -> Tube:
    """Build a gap-free tube over ``segment`` (0-based inclusive frames).

    Frames with a selected box use it verbatim. Interior gaps are linearly
    interpolated corner-by-corner between the nearest selected neighbors;
    leading/trailing gaps copy the nearest selection. If no frame has a
    selection, the highest-scoring raw detection per frame (``fallback``,
    rule filters ignored) is used instead; with no detections at all the
    segment cannot produce a tube.
    """
    start, end = segment
    if start > end:
        raise InvariantError("segment ends before it starts")
    frames = list(range(start, end + 1))
    boxes = {t: selections.get(t) for t in frames}
    if all(b is None for b in boxes.values()):
        if fallback:
            for t in frames:
                dets = fallback.get(t) or []
                if dets:
                    boxes[t] = max(dets, key=lambda d: d.score).box
        if all(b is None for b in boxes.values()):
            raise NoDetectionsError(
                "no detections anywhere in segment [%d, %d] of %r"
                % (start, end, video_id)
            )
    anchors = [t for t in frames if boxes[t] is not None]
    out = []
    for t in frames:
        if boxes[t] is not None:
            out.append(tuple(float(v) for v in boxes[t]))
            continue
        prev = max((a for a in anchors if a < t), default=None)
        nxt = min((a for a in anchors if a > t), default=None)
        if prev is None:
            out.append(tuple(float(v) for v in boxes[nxt]))
        elif nxt is None:
            out.append(tuple(float(v) for v in boxes[prev]))
        else:
            w = (t - prev) / (nxt - prev)
            out.append(_lerp_box(boxes[prev], boxes[nxt], w))
    return Tube(video_id, start, end, out, query_id=query_id)


def build_tube(video_id: str, query: QueryRecord, segment: Tuple[int, int],
               detections_by_frame: Dict[int, List[Detection]],
               lexicon=DEFAULT_PERSON_NOUNS) -> Tube:
    """Full per-sample second stage: subject, filters, selection, assembly."""
    subject = extract_subject(query, lexicon)
    selections = {}
    for t in range(segment[0], segment[1] + 1):
        frame = FrameDetections(video_id, t, detections_by_frame.get(t, []))
        chosen = select_box(filter_detections(frame, subject, lexicon))
        selections[t] = chosen.box if chosen is not None else None
    return assemble_tube(video_id, segment, selections,
                         fallback=detections_by_frame, query_id=query.query_id)


def clip_frame_spans(n_clips: int, frames_per_clip: int) -> List[Tuple[int, int]]:
    """Uniform clip -> frame spans: clip k (1-based) covers 0-based frames
    [(k-1)*frames_per_clip, k*frames_per_clip - 1]."""
    if frames_per_clip < 1:
        raise InvariantError("frames_per_clip must be >= 1")
    return [((k - 1) * frames_per_clip, k * frames_per_clip - 1)
            for k in range(1, n_clips + 1)]


def clip_segment_to_frames(pred: MomentPrediction,
                           spans: List[Tuple[int, int]]) -> Tuple[int, int]:
    """Map a clip-span prediction to its covered frame range."""
    if not spans:
        raise InvariantError("empty clip-to-frame mapping")
    last = None
    for first_f, last_f in spans:
        if first_f > last_f or (last is not None and first_f != last + 1):
            raise InvariantError("clip-to-frame mapping must be contiguous and monotone")
        last = last_f
    prop = pred.proposal
    if prop.end > len(spans):
        raise InvariantError(
            "proposal end %d beyond mapped clips %d" % (prop.end, len(spans))
        )
    return spans[prop.start - 1][0], spans[prop.end - 1][1]
