"""Fixed-window event accumulation and polarity-binarized frames.

The stream is tiled into half-open windows anchored at the first event's
timestamp. Each window accumulates per-pixel event counts into a positive
and a negative channel; binarization keeps the strongest channel per pixel
and drops ties (including 0 vs 0), so at most one channel fires per pixel.

Frame archive format (magic ``SPKF``, little-endian):
    header: ``SPKF`` + version u32 + width u32 + height u32
            + window_len_ms u32 + frame_count u32
    per frame: t_center_us u64, pose 6 x f64,
               2 bitplanes (positive then negative), each row-major,
               packed 8 pixels/byte (numpy packbits order).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .events import EventStream

SPKF_MAGIC = b"SPKF"
SPKF_VERSION = 1
SPKF_HEADER = struct.Struct("<4sIIIII")
_FRAME_FIXED = struct.Struct("<Q6d")


class FrameFormatError(ValueError):
    """Malformed frame archive or out-of-contract frame data."""


@dataclass
class CountFrame:
    window_start_us: int
    window_end_us: int
    pos_counts: np.ndarray  # (H, W) uint32
    neg_counts: np.ndarray  # (H, W) uint32


@dataclass
class BinaryFrame:
    channels: np.ndarray  # (2, H, W) uint8, channel 0 positive / 1 negative


@dataclass(frozen=True)
class Pose6D:
    """Translation (m) + rotation-vector (rad), both 3-vectors."""

    translation: tuple[float, float, float]
    rotation: tuple[float, float, float]

    def __post_init__(self):
        vals = (*self.translation, *self.rotation)
        if len(vals) != 6 or not all(np.isfinite(v) for v in vals):
            raise ValueError(f"pose components must be 6 finite scalars, got {vals}")

    @classmethod
    def from_vector(cls, v) -> "Pose6D":
        v = np.asarray(v, np.float64).reshape(6)
        return cls(tuple(v[:3]), tuple(v[3:]))

    def as_vector(self) -> np.ndarray:
        return np.array([*self.translation, *self.rotation], np.float64)


@dataclass
class LabeledFrame:
    frame: BinaryFrame
    pose: Pose6D
    t_center_us: int


def window_events(stream: EventStream, window_len_ms: float = 100.0) -> list[CountFrame]:
    """Accumulate the stream into fixed windows of `window_len_ms`.

    Windows tile [t_first, t_last] on a grid anchored at t_first,
    half-open on the right; the trailing partial window is kept. Every
    event lands in exactly one window.
    """
    if window_len_ms <= 0:
        raise ValueError("window_len_ms must be > 0")
    if len(stream) == 0:
        return []

    h, w = stream.geometry.height, stream.geometry.width
    window_us = int(round(window_len_ms * 1000))
    t = stream.t_us.astype(np.int64)
    t0 = int(t.min())
    idx = (t - t0) // window_us
    n_windows = int(idx.max()) + 1

    # one flat bincount over (window, polarity, pixel)
    flat = (idx * 2 + stream.polarity.astype(np.int64)) * (h * w) \
        + stream.y.astype(np.int64) * w + stream.x.astype(np.int64)
    counts = np.bincount(flat, minlength=n_windows * 2 * h * w).astype(np.uint32)
    counts = counts.reshape(n_windows, 2, h, w)

    frames = []
    for i in range(n_windows):
        start = t0 + i * window_us
        frames.append(CountFrame(start, start + window_us,
                                 pos_counts=counts[i, 1], neg_counts=counts[i, 0]))
    return frames


def binarize(frame: CountFrame) -> BinaryFrame:
    """Keep the strongest polarity channel per pixel; ties (incl. 0,0) go dark."""
    pos = frame.pos_counts
    neg = frame.neg_counts
    channels = np.stack([(pos > neg), (neg > pos)]).astype(np.uint8)
    return BinaryFrame(channels)


def sparsity(frame: BinaryFrame) -> float:
    """Fraction of active cells over both channels, in [0, 1]."""
    return float(frame.channels.sum()) / frame.channels.size


def associate_poses(count_frames: list[CountFrame], pose_t_us, poses,
                    tolerance_us: int | None = None
                    ) -> tuple[list[tuple[CountFrame, Pose6D, int]], int]:
    """Label each window with the pose nearest its center time.

    Frames whose nearest pose is further than `tolerance_us` (default: one
    window length) are dropped; returns (labeled, dropped_count) where
    labeled entries are (frame, pose, t_center_us).
    """
    pose_t = np.asarray(pose_t_us, np.int64)
    poses = np.asarray(poses, np.float64).reshape(-1, 6)
    if len(pose_t) == 0:
        raise FrameFormatError("empty pose track")
    if np.any(np.diff(pose_t) < 0):
        raise FrameFormatError("pose track timestamps must be sorted")

    labeled = []
    dropped = 0
    for cf in count_frames:
        if tolerance_us is None:
            tol = cf.window_end_us - cf.window_start_us
        else:
            tol = tolerance_us
        center = (cf.window_start_us + cf.window_end_us) // 2
        j = int(np.searchsorted(pose_t, center))
        best, best_dt = None, None
        for cand in (j - 1, j):
            if 0 <= cand < len(pose_t):
                dt = abs(int(pose_t[cand]) - center)
                if best_dt is None or dt < best_dt:
                    best, best_dt = cand, dt
        if best_dt is None or best_dt > tol:
            dropped += 1
            continue
        labeled.append((cf, Pose6D.from_vector(poses[best]), int(center)))
    return labeled, dropped


def build_labeled_frames(stream: EventStream, pose_t_us, poses,
                         window_len_ms: float = 100.0) -> tuple[list[LabeledFrame], int]:
    """Window, binarize and label a stream in one pass."""
    count_frames = window_events(stream, window_len_ms)
    labeled, dropped = associate_poses(count_frames, pose_t_us, poses)
    out = [LabeledFrame(binarize(cf), pose, t_center) for cf, pose, t_center in labeled]
    return out, dropped


def _packed_plane_size(height: int, width: int) -> int:
    return (height * width + 7) // 8


def write_frame_archive(frames: list[LabeledFrame], width: int, height: int,
                        window_len_ms: int) -> bytes:
    """Serialize labeled binary frames with 1-bit packed channel planes."""
    parts = [SPKF_HEADER.pack(SPKF_MAGIC, SPKF_VERSION, width, height,
                              int(window_len_ms), len(frames))]
    for lf in frames:
        ch = lf.frame.channels
        if ch.shape != (2, height, width):
            raise FrameFormatError(f"frame shape {ch.shape} does not match archive "
                                   f"geometry {height}x{width}")
        parts.append(_FRAME_FIXED.pack(lf.t_center_us, *lf.pose.as_vector()))
        parts.append(np.packbits(ch[0].reshape(-1)).tobytes())
        parts.append(np.packbits(ch[1].reshape(-1)).tobytes())
    return b"".join(parts)


def read_frame_archive(data: bytes) -> tuple[list[LabeledFrame], dict]:
    """Parse a frame archive; returns (frames, meta dict)."""
    if len(data) < SPKF_HEADER.size:
        raise FrameFormatError("file shorter than the archive header")
    magic, version, width, height, window_len_ms, count = SPKF_HEADER.unpack_from(data, 0)
    if magic != SPKF_MAGIC:
        raise FrameFormatError(f"bad magic {magic!r}, expected {SPKF_MAGIC!r}")
    if version != SPKF_VERSION:
        raise FrameFormatError(f"unsupported version {version}")

    plane = _packed_plane_size(height, width)
    offset = SPKF_HEADER.size
    frames = []
    for i in range(count):
        need = _FRAME_FIXED.size + 2 * plane
        if offset + need > len(data):
            raise FrameFormatError(f"truncated frame {i}")
        fixed = _FRAME_FIXED.unpack_from(data, offset)
        offset += _FRAME_FIXED.size
        t_center, pose_vals = fixed[0], fixed[1:]
        chans = []
        for _ in range(2):
            bits = np.unpackbits(np.frombuffer(data, np.uint8, plane, offset),
                                 count=height * width)
            chans.append(bits.reshape(height, width))
            offset += plane
        frames.append(LabeledFrame(BinaryFrame(np.stack(chans).astype(np.uint8)),
                                   Pose6D.from_vector(pose_vals), t_center))
    meta = {"width": width, "height": height, "window_len_ms": window_len_ms,
            "frame_count": count}
    return frames, meta


def frames_to_arrays(frames: list[LabeledFrame]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack labeled frames into (N,2,H,W) uint8, (N,6) float64, (N,) int64 arrays."""
    if not frames:
        raise FrameFormatError("no frames")
    x = np.stack([lf.frame.channels for lf in frames]).astype(np.uint8)
    poses = np.stack([lf.pose.as_vector() for lf in frames])
    t = np.array([lf.t_center_us for lf in frames], np.int64)
    return x, poses, t
