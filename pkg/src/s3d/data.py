"""Synthetic untrimmed videos, annotation I/O, training-window slicing,
and jitter augmentation.

Each activity class renders a distinct spatiotemporal pattern: a bright
square (side H/4) translating along a per-class direction and blinking
with per-class period k frames, over a uniform-noise background. Videos
are stored as raw fp64 tensors (magic ``S3DV``) so no codec is involved;
annotations and the dataset manifest are JSON.

Everything is a pure function of the spec including its seed: video i of
split s draws from ``SeedSequence(seed, spawn_key=(s, i))``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import GenerationError, InputError
from .infer import WindowPlacement
from .spans import Span

VIDEO_MAGIC = b"S3DV"
VIDEO_VERSION = 1
RETENTION_FRACTION = 0.5  # clipped instances shorter than this fraction are dropped
INSTANCE_GAP_FRAMES = 1
SQUARE_SPEED = 0.5  # pixels per frame


@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs of the synthetic dataset generator."""

    num_classes: int = 3
    duration_range_sec: tuple[float, float] = (60.0, 180.0)
    fps: float = 8.0
    frame_size: tuple[int, int] = (16, 16)
    instance_length_range_sec: tuple[float, float] = (2.0, 8.0)
    instances_per_video: tuple[int, int] = (1, 8)
    noise_amplitude: float = 0.2
    seed: int = 42

    def __post_init__(self) -> None:
        if self.num_classes < 1:
            raise InputError("num_classes must be >= 1")
        if self.fps <= 0:
            raise InputError("fps must be > 0")
        lo, hi = self.duration_range_sec
        if not (0 < lo <= hi):
            raise InputError(f"bad duration range {self.duration_range_sec}")
        lo, hi = self.instance_length_range_sec
        if not (0 < lo <= hi):
            raise InputError(f"bad instance length range {self.instance_length_range_sec}")
        lo, hi = self.instances_per_video
        if not (0 <= lo <= hi):
            raise InputError(f"bad instances-per-video range {self.instances_per_video}")
        if self.noise_amplitude < 0:
            raise InputError("noise_amplitude must be >= 0")

    @property
    def class_names(self) -> list[str]:
        return [f"activity_{k}" for k in range(1, self.num_classes + 1)]


@dataclass(frozen=True)
class Annotation:
    label: int
    start_sec: float
    end_sec: float


@dataclass
class VideoRecord:
    video_id: str
    frames: np.ndarray  # (T, H, W, 3) fp64
    fps: float
    annotations: list[Annotation]

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def duration_sec(self) -> float:
        return self.num_frames / self.fps


@dataclass
class TrainingWindow:
    """One network input: frames, where it sits in the video, and its
    window-normalized annotations."""

    frames: np.ndarray
    placement: WindowPlacement
    annotations: list[tuple[Span, int]]

    def __post_init__(self) -> None:
        eps = 1e-9
        for span, label in self.annotations:
            if span.start < -eps or span.end > 1.0 + eps:
                raise InputError(f"annotation span [{span.start}, {span.end}] outside window")
            if label < 1:
                raise InputError(f"annotation class {label} must be >= 1")


def _class_direction(label: int, num_classes: int) -> tuple[float, float]:
    angle = 2.0 * np.pi * (label - 1) / num_classes
    return float(np.cos(angle)), float(np.sin(angle))


PLACEMENT_ATTEMPTS = 50


def _draw_instances(
    rng: np.random.Generator, spec: SyntheticSpec, num_frames: int
) -> tuple[np.ndarray, np.ndarray]:
    """Draw a feasible (lengths, starts) configuration: instance count and
    lengths are resampled until they fit with >= 1 frame gaps; impossible
    densities raise after a bounded number of attempts."""
    imin, imax = spec.instances_per_video
    lmin = round(spec.instance_length_range_sec[0] * spec.fps)
    lmax = round(spec.instance_length_range_sec[1] * spec.fps)
    for _ in range(PLACEMENT_ATTEMPTS):
        n = int(rng.integers(imin, imax + 1))
        if n == 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        lengths = rng.integers(lmin, lmax + 1, size=n)
        occupied = int(lengths.sum()) + INSTANCE_GAP_FRAMES * (n - 1)
        free = num_frames - occupied
        if free < 0:
            continue
        cuts = np.sort(rng.integers(0, free + 1, size=n))
        starts = np.empty(n, dtype=np.int64)
        cursor = 0
        for i in range(n):
            starts[i] = cuts[i] + cursor
            cursor += lengths[i] + INSTANCE_GAP_FRAMES
        return lengths, starts
    raise GenerationError(
        f"cannot place {imin}..{imax} instances of "
        f"{spec.instance_length_range_sec[0]}..{spec.instance_length_range_sec[1]}s "
        f"in a {num_frames}-frame ({num_frames / spec.fps:.1f}s) video after "
        f"{PLACEMENT_ATTEMPTS} attempts"
    )


def render_instance(
    frames: np.ndarray, label: int, start: int, length: int, spec: SyntheticSpec,
    rng: np.random.Generator,
) -> None:
    """Draw one activity instance in place: a bright square translating
    along the class direction, visible on alternating blocks of ``label``
    frames (the blink period)."""
    h, w = spec.frame_size
    side = max(h // 4, 1)
    dy, dx = _class_direction(label, spec.num_classes)
    y0 = rng.uniform(0, h)
    x0 = rng.uniform(0, w)
    for t_rel in range(length):
        if (t_rel // label) % 2 != 0:
            continue  # blink-off block
        y = int(np.floor(y0 + SQUARE_SPEED * dy * t_rel)) % h
        x = int(np.floor(x0 + SQUARE_SPEED * dx * t_rel)) % w
        rows = np.arange(y, y + side) % h
        cols = np.arange(x, x + side) % w
        frames[start + t_rel, rows[:, None], cols[None, :], :] = 1.0


def generate_video(spec: SyntheticSpec, video_index: int, split_key: int = 0) -> VideoRecord:
    """Deterministically generate one untrimmed video with annotations."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(split_key, video_index)))
    dmin, dmax = spec.duration_range_sec
    num_frames = int(rng.integers(round(dmin * spec.fps), round(dmax * spec.fps) + 1))
    h, w = spec.frame_size
    frames = rng.uniform(0.0, spec.noise_amplitude, size=(num_frames, h, w, 3))

    lengths, starts = _draw_instances(rng, spec, num_frames)
    annotations: list[Annotation] = []
    if len(lengths):
        labels = rng.integers(1, spec.num_classes + 1, size=len(lengths))
        for start, length, label in zip(starts, lengths, labels):
            render_instance(frames, int(label), int(start), int(length), spec, rng)
            annotations.append(
                Annotation(int(label), float(start / spec.fps), float((start + length) / spec.fps))
            )
    return VideoRecord(f"video_{split_key}_{video_index:04d}", frames, spec.fps, annotations)


# --- raw tensor file I/O ---

def write_video_tensor(path: str | Path, frames: np.ndarray) -> None:
    frames = np.ascontiguousarray(frames, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(VIDEO_MAGIC)
        fh.write(bytes([VIDEO_VERSION]))
        fh.write(struct.pack("<4Q", *frames.shape))
        fh.write(frames.tobytes())


def read_video_tensor(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != VIDEO_MAGIC:
            raise InputError(f"bad video magic {magic!r} in {path}")
        version = fh.read(1)
        if version != bytes([VIDEO_VERSION]):
            raise InputError(f"unsupported video file version {version!r} in {path}")
        shape = struct.unpack("<4Q", fh.read(32))
        count = int(np.prod(shape))
        data = fh.read(8 * count)
        if len(data) != 8 * count:
            raise InputError(f"truncated video tensor {path}")
        return np.frombuffer(data, dtype="<f8").astype(np.float64).reshape(shape)


# --- dataset on disk ---

def generate_synthetic_dataset(
    spec: SyntheticSpec, num_videos: int, out_dir: str | Path, split_key: int = 0
) -> dict:
    """Generate and write a dataset split; returns the manifest dict."""
    out = Path(out_dir)
    (out / "videos").mkdir(parents=True, exist_ok=True)
    manifest_videos = []
    annotation_records = []
    for i in range(num_videos):
        video = generate_video(spec, i, split_key)
        rel = f"videos/{video.video_id}.s3dv"
        write_video_tensor(out / rel, video.frames)
        manifest_videos.append(
            {
                "id": video.video_id,
                "path": rel,
                "num_frames": video.num_frames,
                "fps": video.fps,
                "duration_sec": video.duration_sec,
            }
        )
        annotation_records.append(annotations_to_json(video, spec.class_names))
    manifest = {
        "seed": spec.seed,
        "split_key": split_key,
        "spec": asdict(spec),
        "class_names": spec.class_names,
        "videos": manifest_videos,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    (out / "annotations.json").write_text(json.dumps(annotation_records, indent=2))
    return manifest


def annotations_to_json(video: VideoRecord, class_names: list[str]) -> dict:
    return {
        "video_id": video.video_id,
        "fps": video.fps,
        "num_frames": video.num_frames,
        "annotations": [
            {
                "label": class_names[a.label - 1],
                "start_sec": a.start_sec,
                "end_sec": a.end_sec,
            }
            for a in video.annotations
        ],
    }


def load_annotations(path: str | Path) -> list[dict]:
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = [data]
    return data


def load_dataset(data_dir: str | Path) -> tuple[dict, list[VideoRecord]]:
    """Read a split directory back into memory."""
    root = Path(data_dir)
    manifest = json.loads((root / "manifest.json").read_text())
    class_names = manifest["class_names"]
    name_to_label = {n: k + 1 for k, n in enumerate(class_names)}
    ann_by_video = {rec["video_id"]: rec for rec in load_annotations(root / "annotations.json")}
    videos = []
    for entry in manifest["videos"]:
        frames = read_video_tensor(root / entry["path"])
        rec = ann_by_video.get(entry["id"], {"annotations": []})
        annotations = [
            Annotation(name_to_label[a["label"]], a["start_sec"], a["end_sec"])
            for a in rec["annotations"]
        ]
        videos.append(VideoRecord(entry["id"], frames, entry["fps"], annotations))
    return manifest, videos


# --- windowing ---

def window_offsets(num_frames: int, stride: int) -> list[int]:
    """Window start frames: every multiple of the stride inside the video,
    so each frame belongs to at least one window."""
    if stride < 1:
        raise InputError("stride must be >= 1")
    return list(range(0, max(num_frames, 1), stride))


def extract_frames(
    frames: np.ndarray, offset: int, length: int,
    noise_amplitude: float = 0.0, rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Window slice, tail-padded with background noise past the video end."""
    num_frames = frames.shape[0]
    end = min(offset + length, num_frames)
    out = frames[offset:end]
    missing = length - out.shape[0]
    if missing > 0:
        shape = (missing, *frames.shape[1:])
        if rng is not None and noise_amplitude > 0:
            pad = rng.uniform(0.0, noise_amplitude, size=shape)
        else:
            pad = np.zeros(shape)
        out = np.concatenate([out, pad], axis=0)
    return np.ascontiguousarray(out)


def window_annotations(
    annotations: list[Annotation], offset: int, length: int, fps: float
) -> list[tuple[Span, int]]:
    """Clip annotations to the window [offset, offset+length) frames and
    keep only those retaining at least half their original length."""
    result = []
    for ann in annotations:
        s_f = ann.start_sec * fps
        e_f = ann.end_sec * fps
        cs = max(s_f, float(offset))
        ce = min(e_f, float(offset + length))
        clipped = ce - cs
        if clipped <= 0 or clipped < RETENTION_FRACTION * (e_f - s_f):
            continue
        center = ((cs + ce) / 2.0 - offset) / length
        result.append((Span(center, clipped / length), ann.label))
    return result


def make_windows(
    video: VideoRecord, window_len: int, stride: int,
    noise_amplitude: float = 0.0, rng: np.random.Generator | None = None,
) -> list[TrainingWindow]:
    """Slide a window of ``window_len`` frames over the video."""
    windows = []
    for offset in window_offsets(video.num_frames, stride):
        frames = extract_frames(video.frames, offset, window_len, noise_amplitude, rng)
        placement = WindowPlacement(offset / video.fps, window_len / video.fps, video.fps)
        anns = window_annotations(video.annotations, offset, window_len, video.fps)
        windows.append(TrainingWindow(frames, placement, anns))
    return windows


# --- augmentation ---

@dataclass(frozen=True)
class JitterSpec:
    """Augmentation magnitudes; all-zero settings make jitter the identity."""

    max_shift_frames: int = 8
    crop_pixels: int = 1
    flip_prob: float = 0.5


def jitter(
    window: TrainingWindow,
    jspec: JitterSpec,
    rng: np.random.Generator,
    source: VideoRecord,
    noise_amplitude: float = 0.0,
) -> TrainingWindow:
    """Temporal shift plus spatial crop-resize and horizontal flip.

    The temporal shift re-extracts frames and annotations from the source
    video, so annotations stay exact; spatial jitter never touches them.
    """
    fps = window.placement.fps
    length = int(round(window.placement.window_duration_sec * fps))
    offset = int(round(window.placement.window_start_sec * fps))

    if jspec.max_shift_frames > 0:
        shift = int(rng.integers(-jspec.max_shift_frames, jspec.max_shift_frames + 1))
        offset = max(offset + shift, 0)
        frames = extract_frames(source.frames, offset, length, noise_amplitude, rng)
        anns = window_annotations(source.annotations, offset, length, fps)
    else:
        frames = window.frames
        anns = window.annotations

    h, w = frames.shape[1], frames.shape[2]
    c = jspec.crop_pixels
    if c > 0 and h > 2 * c and w > 2 * c:
        oy = int(rng.integers(0, 2 * c + 1))
        ox = int(rng.integers(0, 2 * c + 1))
        cropped = frames[:, oy : oy + h - 2 * c, ox : ox + w - 2 * c, :]
        iy = np.floor(np.arange(h) * (h - 2 * c) / h).astype(np.int64)
        ix = np.floor(np.arange(w) * (w - 2 * c) / w).astype(np.int64)
        frames = np.ascontiguousarray(cropped[:, iy[:, None], ix[None, :], :])

    if jspec.flip_prob > 0 and rng.uniform() < jspec.flip_prob:
        frames = np.ascontiguousarray(frames[:, :, ::-1, :])

    placement = WindowPlacement(offset / fps, length / fps, fps)
    return TrainingWindow(frames, placement, anns)
