"""On-disk formats, dataset manifests and the sequence-level evaluation.

Pose files are UTF-8 JSON lines. The first line is a header::

    {"format": "ehpi-pose-1", "source": "...", "fps": 30.0,
     "image_w": 1280, "image_h": 720, "action": "wave"}

and every following line is one frame::

    {"frame_index": 0, "humans": [{"track_id": null, "joints": [[x, y, score], ...]}]}

with exactly 15 joint triples per human, in joint-id order.
"""
from __future__ import annotations

import csv
import json
import struct
import warnings
from collections import Counter, deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .ehpi import (
    EHPI_CHANNELS,
    EHPI_FRAMES,
    Ehpi,
    EhpiBuffer,
    encode_frame,
    mask_invalid_joints,
    materialize,
    normalize_batch,
)
from .errors import BadMagic, EmptyClass, ParseError, SchemaError, TruncatedFile
from .pose_core import NUM_JOINTS, Origin, Skeleton
from .tracking import Tracker, TrackerConfig

POSE_FORMAT = "ehpi-pose-1"
EHPI_MAGIC = b"EHPI1"
DEFAULT_ACTIONS = ("idle", "walk", "wave")


# -- pose sequences -----------------------------------------------------------------

@dataclass
class SequenceMeta:
    source: str = ""
    fps: float = 30.0
    image_w: int = 1280
    image_h: int = 720
    action: str | None = None


@dataclass
class HumanRecord:
    joints: np.ndarray  # (15, 3): x, y, score
    track_id: int | None = None

    def skeleton(self) -> Skeleton:
        return Skeleton(self.joints)


@dataclass
class Frame:
    frame_index: int
    humans: list[HumanRecord] = field(default_factory=list)


@dataclass
class PoseSequence:
    meta: SequenceMeta
    frames: list[Frame]

    def __post_init__(self):
        last = None
        for fr in self.frames:
            if last is not None and fr.frame_index <= last:
                raise SchemaError(f"frame_index {fr.frame_index} does not increase after {last}")
            last = fr.frame_index
            for h in fr.humans:
                if np.shape(h.joints) != (NUM_JOINTS, 3):
                    raise SchemaError(
                        f"frame {fr.frame_index}: human has joint array {np.shape(h.joints)}, need (15, 3)"
                    )

    def __len__(self):
        return len(self.frames)


def _fmt(v: float) -> float:
    return round(float(v), 6)


def write_pose_sequence(seq: PoseSequence, path) -> None:
    lines = [json.dumps({"format": POSE_FORMAT, **asdict(seq.meta)})]
    for fr in seq.frames:
        humans = [
            {"track_id": h.track_id, "joints": [[_fmt(x), _fmt(y), _fmt(s)] for x, y, s in h.joints]}
            for h in fr.humans
        ]
        lines.append(json.dumps({"frame_index": fr.frame_index, "humans": humans}))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_pose_sequence(path) -> PoseSequence:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise ParseError("missing header record", 1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"header is not valid JSON ({exc.msg})", 1) from None
    if not isinstance(header, dict) or header.get("format") != POSE_FORMAT:
        raise ParseError(f"header must be an object with format {POSE_FORMAT!r}", 1)
    try:
        meta = SequenceMeta(
            source=str(header.get("source", "")),
            fps=float(header.get("fps", 30.0)),
            image_w=int(header.get("image_w", 0)),
            image_h=int(header.get("image_h", 0)),
            action=header.get("action"),
        )
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bad header field ({exc})", 1) from None

    frames = []
    last_index = None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            idx = int(rec["frame_index"])
            raw_humans = rec.get("humans", [])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed frame record ({exc})", lineno) from None
        if last_index is not None and idx <= last_index:
            raise SchemaError(f"frame_index {idx} does not increase after {last_index}", lineno)
        last_index = idx
        humans = []
        for h in raw_humans:
            try:
                joints = np.asarray(h["joints"], dtype=np.float64)
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"malformed human record ({exc})", lineno) from None
            if joints.shape != (NUM_JOINTS, 3):
                raise SchemaError(f"expected 15 joint triples, got shape {joints.shape}", lineno)
            tid = h.get("track_id")
            humans.append(HumanRecord(joints, None if tid is None else int(tid)))
        frames.append(Frame(idx, humans))
    return PoseSequence(meta, frames)


# -- EHPI tensors ---------------------------------------------------------------------

_EHPI_HEADER = struct.Struct("<5s3I")


def write_ehpi_tensor(e: Ehpi, path) -> None:
    """Magic, dims (32, 15, 3) as uint32, float32 values, then the presence
    bitmap packed MSB-first in row-major order."""
    head = _EHPI_HEADER.pack(EHPI_MAGIC, EHPI_FRAMES, NUM_JOINTS, EHPI_CHANNELS)
    body = np.ascontiguousarray(e.values, dtype="<f4").tobytes()
    bits = np.packbits(e.present.ravel()).tobytes()
    Path(path).write_bytes(head + body + bits)


def read_ehpi_tensor(path) -> Ehpi:
    data = Path(path).read_bytes()
    if data[:5] != EHPI_MAGIC:
        raise BadMagic(f"{path}: not an EHPI1 tensor")
    if len(data) < _EHPI_HEADER.size:
        raise TruncatedFile(f"{path}: header cut short")
    _, m, n, c = _EHPI_HEADER.unpack_from(data)
    if (m, n, c) != (EHPI_FRAMES, NUM_JOINTS, EHPI_CHANNELS):
        raise SchemaError(f"{path}: unsupported dims {(m, n, c)}")
    n_vals = m * n * c
    n_bits = (m * n + 7) // 8
    need = _EHPI_HEADER.size + 4 * n_vals + n_bits
    if len(data) < need:
        raise TruncatedFile(f"{path}: {len(data)} bytes, expected {need}")
    off = _EHPI_HEADER.size
    values = np.frombuffer(data, dtype="<f4", count=n_vals, offset=off).reshape(m, n, c).copy()
    bits = np.frombuffer(data, dtype=np.uint8, count=n_bits, offset=off + 4 * n_vals)
    present = np.unpackbits(bits)[: m * n].astype(bool).reshape(m, n)
    return Ehpi(values, present)


# -- manifests --------------------------------------------------------------------------

MANIFEST_FIELDS = ("path", "action", "variant", "split", "camera", "take")
VARIANTS = ("clean", "noisy", "real")
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ManifestRow:
    path: str
    action: str
    variant: str = "clean"
    split: str = "train"
    camera: str = ""
    take: str = ""


@dataclass
class DatasetManifest:
    rows: list[ManifestRow]
    actions: tuple[str, ...] = DEFAULT_ACTIONS
    base_dir: Path = field(default_factory=Path)

    def __post_init__(self):
        self.actions = tuple(self.actions)
        unknown = {r.action for r in self.rows} - set(self.actions)
        if unknown:
            raise SchemaError(f"labels outside the action set: {sorted(unknown)}")
        seen: dict[str, str] = {}
        for r in self.rows:
            if seen.setdefault(r.path, r.split) != r.split:
                raise SchemaError(f"{r.path} appears in splits {seen[r.path]} and {r.split}")

    def __len__(self):
        return len(self.rows)

    def select(self, split: str | None = None, variants=None) -> "DatasetManifest":
        if isinstance(variants, str):
            variants = ("clean", "noisy") if variants == "combined" else (variants,)
        rows = [
            r for r in self.rows
            if (split is None or r.split == split) and (variants is None or r.variant in variants)
        ]
        return DatasetManifest(rows, self.actions, self.base_dir)

    def label_of(self, row: ManifestRow) -> int:
        return self.actions.index(row.action)

    def resolve(self, row: ManifestRow) -> Path:
        p = Path(row.path)
        return p if p.is_absolute() else self.base_dir / p


def write_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write("# actions=" + ",".join(manifest.actions) + "\n")
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS, lineterminator="\n")
        writer.writeheader()
        for r in manifest.rows:
            writer.writerow(asdict(r))


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        first = fh.readline()
        actions = DEFAULT_ACTIONS
        if first.startswith("# actions="):
            actions = tuple(a for a in first.strip()[len("# actions="):].split(",") if a)
        else:
            fh.seek(0)
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_FIELDS[:2]) - set(reader.fieldnames or ())
        if missing:
            raise SchemaError(f"{path}: manifest lacks columns {sorted(missing)}")
        rows = [ManifestRow(**{k: row.get(k) or "" for k in MANIFEST_FIELDS}) for row in reader]
    for r in rows:
        if r.variant not in VARIANTS or r.split not in SPLITS:
            raise SchemaError(f"{path}: bad variant/split in row {r}")
    return DatasetManifest(rows, actions, path.parent)


def split_dataset(manifest: DatasetManifest, fractions: dict[str, float], seed: int) -> DatasetManifest:
    """Stratified split by action label.

    ``fractions`` maps split names (``val``, ``test``) to fractions of each
    class; counts are floored and everything left goes to ``train``. Rows
    sharing a non-empty ``take`` move together, so one recorded motion never
    lands in two splits.
    """
    if sum(fractions.values()) > 1.0 + 1e-12 or any(f < 0 for f in fractions.values()):
        raise ValueError(f"invalid split fractions {fractions}")
    bad = set(fractions) - set(SPLITS)
    if bad:
        raise ValueError(f"unknown split names {sorted(bad)}")
    rng = np.random.default_rng(seed)
    assignment: dict[str, str] = {}
    for action in manifest.actions:
        groups = sorted({r.take or r.path for r in manifest.rows if r.action == action})
        if not groups:
            raise EmptyClass(f"no sequences for action {action!r}")
        groups = [groups[i] for i in rng.permutation(len(groups))]
        pos = 0
        for split, frac in fractions.items():
            k = int(np.floor(frac * len(groups) + 1e-9))
            if frac > 0 and k == 0:
                warnings.warn(
                    f"action {action!r}: {len(groups)} group(s) give no {split} samples at fraction {frac}",
                    stacklevel=2,
                )
            for g in groups[pos:pos + k]:
                assignment[g] = split
            pos += k
        for g in groups[pos:]:
            assignment[g] = "train"
    rows = [replace(r, split=assignment[r.take or r.path]) for r in manifest.rows]
    return DatasetManifest(rows, manifest.actions, manifest.base_dir)


# -- pose stream -> EHPI windows -------------------------------------------------------------

class PoseStreamEncoder:
    """Tracks the humans of a pose stream and keeps one EHPI buffer per track.

    A track coasting without a detection contributes an all-zero column for
    that frame; buffers of vanished tracks are dropped.
    """

    def __init__(self, image_w: float, image_h: float, tracker_cfg: TrackerConfig | None = None):
        self.cfg = tracker_cfg or TrackerConfig()
        self.image_w = image_w
        self.image_h = image_h
        self.tracker = Tracker(self.cfg)
        self.buffers: dict[int, EhpiBuffer] = {}

    def step(self, skeletons: list[Skeleton], image=None):
        """Returns ``[(TrackedHuman, EhpiBuffer), ...]`` for every live track."""
        live = self.tracker.step(skeletons, image)
        out = []
        buffers = {}
        for human in live:
            buf = self.buffers.get(human.track_id) or EhpiBuffer()
            if human.origin is Origin.DETECTED:
                masked = mask_invalid_joints(human.skeleton, self.image_w, self.image_h, self.cfg.T_J)
                buf.push(*encode_frame(masked))
            else:
                buf.push_empty()
            buffers[human.track_id] = buf
            out.append((human, buf))
        self.buffers = buffers
        return out


@dataclass
class SequenceWindows:
    """EHPI windows of the person followed through one sequence.

    ``values``/``present`` are normalized EHPIs stacked along axis 0, one per
    frame that produced a valid window.
    """

    frame_index: np.ndarray
    track_id: np.ndarray
    values: np.ndarray
    present: np.ndarray

    def __len__(self):
        return len(self.frame_index)


def sequence_windows(seq: PoseSequence, tracker_cfg: TrackerConfig | None = None) -> SequenceWindows:
    """Run tracking and encoding over a sequence.

    In each frame the detected human with the highest pose score whose
    buffer holds a valid EHPI supplies that frame's window.
    """
    enc = PoseStreamEncoder(seq.meta.image_w, seq.meta.image_h, tracker_cfg)
    frames, tids, vals, pres = [], [], [], []
    for fr in seq.frames:
        live = enc.step([h.skeleton() for h in fr.humans])
        best = None
        for human, buf in live:
            if human.origin is not Origin.DETECTED or not buf.is_valid:
                continue
            if best is None or human.skeleton.pose_score > best[0].skeleton.pose_score:
                best = (human, buf)
        if best is None:
            continue
        e = materialize(best[1])
        frames.append(fr.frame_index)
        tids.append(best[0].track_id)
        vals.append(e.values)
        pres.append(e.present)
    if not frames:
        empty_v = np.zeros((0, EHPI_FRAMES, NUM_JOINTS, EHPI_CHANNELS))
        return SequenceWindows(np.zeros(0, int), np.zeros(0, int), empty_v, np.zeros(empty_v.shape[:3], bool))
    values = np.stack(vals)
    present = np.stack(pres)
    return SequenceWindows(np.array(frames), np.array(tids), normalize_batch(values, present), present)


# -- evaluation -----------------------------------------------------------------------------

@dataclass
class EvalReport:
    actions: tuple[str, ...]
    accuracy_seq: float
    accuracy_ehpi: float
    n_sequences: int
    n_windows: int
    # rows: true class; columns: predicted class, last column = no prediction
    confusion: np.ndarray
    sequence_predictions: list[int]

    def to_dict(self) -> dict:
        return {
            "actions": list(self.actions),
            "accuracy_seq": self.accuracy_seq,
            "accuracy_ehpi": self.accuracy_ehpi,
            "n_sequences": self.n_sequences,
            "n_windows": self.n_windows,
            "confusion": self.confusion.tolist(),
            "confusion_columns": list(self.actions) + ["none"],
        }


def _majority(preds: list[int]) -> int:
    counts = Counter(preds)
    top = max(counts.values())
    return min(c for c, n in counts.items() if n == top)


def evaluate_windows(probability_fn, windows: list[SequenceWindows], labels, actions,
                     smoothing_window: int = 20) -> EvalReport:
    """Score precomputed windows.

    ``probability_fn`` maps an (N, 3, 32, 15) batch to class probabilities.
    A sequence's prediction is the majority vote over its per-frame
    smoothed predictions; a sequence without any window counts as wrong.
    """
    actions = tuple(actions)
    n_cls = len(actions)
    sizes = [len(w) for w in windows]
    if sum(sizes):
        values = np.concatenate([w.values for w in windows if len(w)])
        probs = np.asarray(probability_fn(values.transpose(0, 3, 1, 2)))
    else:
        probs = np.zeros((0, n_cls))
    confusion = np.zeros((n_cls, n_cls + 1), dtype=int)
    seq_preds = []
    ehpi_ok = 0
    pos = 0
    for w, label, size in zip(windows, labels, sizes):
        p = probs[pos:pos + size]
        pos += size
        ehpi_ok += int(np.sum(p.argmax(axis=1) == label)) if size else 0
        histories: dict[int, deque] = {}
        smoothed = []
        for row, tid in zip(p, w.track_id):
            hist = histories.setdefault(int(tid), deque(maxlen=smoothing_window))
            hist.append(row)
            smoothed.append(int(np.argmax(np.sum(hist, axis=0))))
        pred = _majority(smoothed) if smoothed else -1
        seq_preds.append(pred)
        confusion[label, pred if pred >= 0 else n_cls] += 1
    n_seq = len(windows)
    n_win = int(sum(sizes))
    return EvalReport(
        actions=actions,
        accuracy_seq=float(np.mean([p == l for p, l in zip(seq_preds, labels)])) if n_seq else 0.0,
        accuracy_ehpi=ehpi_ok / n_win if n_win else 0.0,
        n_sequences=n_seq,
        n_windows=n_win,
        confusion=confusion,
        sequence_predictions=seq_preds,
    )


def evaluate(net, manifest: DatasetManifest, split: str = "test", variants=None,
             tracker_cfg: TrackerConfig | None = None, smoothing_window: int = 20) -> EvalReport:
    """Full-pipeline evaluation of ``net`` on one split of a manifest."""
    sel = manifest.select(split, variants)
    if not sel.rows:
        raise EmptyClass(f"no sequences in split {split!r}")
    windows = [sequence_windows(read_pose_sequence(sel.resolve(r)), tracker_cfg) for r in sel.rows]
    labels = [sel.label_of(r) for r in sel.rows]
    return evaluate_windows(
        lambda x: net.predict_proba(x), windows, labels, manifest.actions, smoothing_window
    )


# -- training sets and live inference -------------------------------------------------------

def window_dataset(manifest: DatasetManifest, split: str, variants=None, stride: int = 1,
                   tracker_cfg: TrackerConfig | None = None, cache: dict | None = None):
    """Collect every ``stride``-th window of each sequence in a split.

    ``cache`` maps manifest paths to :class:`SequenceWindows` and is filled
    as a side effect, so several splits or strides can share one pass.
    """
    from .micronn.train import EhpiDataset

    if stride < 1:
        raise ValueError("stride must be >= 1")
    sel = manifest.select(split, variants)
    vals, pres, labels = [], [], []
    for r in sel.rows:
        w = cache.get(r.path) if cache is not None else None
        if w is None:
            w = sequence_windows(read_pose_sequence(sel.resolve(r)), tracker_cfg)
            if cache is not None:
                cache[r.path] = w
        idx = np.arange(0, len(w), stride)
        vals.append(w.values[idx])
        pres.append(w.present[idx])
        labels.append(np.full(len(idx), sel.label_of(r)))
    if not vals:
        shape = (0, EHPI_FRAMES, NUM_JOINTS, EHPI_CHANNELS)
        return EhpiDataset(np.zeros(shape), np.zeros(shape[:3], bool), np.zeros(0, int), len(manifest.actions))
    return EhpiDataset(np.concatenate(vals), np.concatenate(pres), np.concatenate(labels), len(manifest.actions))


@dataclass
class ActionPrediction:
    track_id: int
    action: int
    probability: float


class ActionStream:
    """Frame-by-frame action recognition for every tracked person.

    Each frame runs three stages, exposed separately so they can be timed:
    ``track`` (association), ``encode`` (EHPI buffers plus normalization)
    and ``infer`` (network plus smoothing over the last frames).
    """

    def __init__(self, net, image_w: float, image_h: float, tracker_cfg: TrackerConfig | None = None,
                 smoothing_window: int = 20):
        self.net = net
        self.encoder = PoseStreamEncoder(image_w, image_h, tracker_cfg)
        self.smoothing_window = smoothing_window
        self.histories: dict[int, deque] = {}

    def track(self, skeletons, image=None):
        return self.encoder.tracker.step(skeletons, image)

    def encode(self, live):
        """Update buffers; returns ``(track_ids, values, present)`` of valid detected tracks."""
        enc = self.encoder
        buffers = {}
        ids, vals, pres = [], [], []
        for human in live:
            buf = enc.buffers.get(human.track_id) or EhpiBuffer()
            if human.origin is Origin.DETECTED:
                masked = mask_invalid_joints(human.skeleton, enc.image_w, enc.image_h, enc.cfg.T_J)
                buf.push(*encode_frame(masked))
                if buf.is_valid:
                    e = materialize(buf)
                    ids.append(human.track_id)
                    vals.append(e.values)
                    pres.append(e.present)
            else:
                buf.push_empty()
            buffers[human.track_id] = buf
        enc.buffers = buffers
        self.histories = {t: h for t, h in self.histories.items() if t in buffers}
        if not ids:
            return ids, None, None
        values = np.stack(vals)
        present = np.stack(pres)
        return ids, normalize_batch(values, present), present

    def infer(self, ids, values) -> list[ActionPrediction]:
        if not ids:
            return []
        probs = self.net.predict_proba(np.ascontiguousarray(values.transpose(0, 3, 1, 2), dtype=self.net.dtype))
        out = []
        for tid, p in zip(ids, probs):
            hist = self.histories.setdefault(tid, deque(maxlen=self.smoothing_window))
            hist.append(np.asarray(p, dtype=np.float64))
            total = np.sum(hist, axis=0)
            k = int(np.argmax(total))
            out.append(ActionPrediction(tid, k, float(total[k] / len(hist))))
        return out

    def step(self, skeletons, image=None) -> list[ActionPrediction]:
        live = self.track(skeletons, image)
        ids, values, _ = self.encode(live)
        return self.infer(ids, values)
