"""Event stream handling: parsing, serialization, sorting, noise injection.

An event stream is the raw output of an event-based camera: per-pixel
timestamped polarity changes. Streams are stored column-wise (one numpy
array per field) for speed; `Event` is the per-record view.

On-disk formats (bit-exact, little-endian):

CSV events
    Optional header line ``# width,height``; then one event per line,
    ``t_us,x,y,p`` with p in {0, 1} (0 = negative polarity).

Binary events (magic ``SPKE``)
    16-byte header: magic ``SPKE`` + version u32 + width u32 + height u32,
    then 13-byte records: t_us u64, x u16, y u16, polarity u8.

Pose track CSV
    Header line ``# pose_track v1``; rows ``t_us,x,y,z,rx,ry,rz`` with
    translation in meters and rotation-vector components in radians.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

SPKE_MAGIC = b"SPKE"
SPKE_VERSION = 1
SPKE_HEADER = struct.Struct("<4sIII")
EVENT_RECORD_DTYPE = np.dtype(
    [("t_us", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "u1")]
)  # 13 bytes, unaligned

POSE_TRACK_HEADER = "# pose_track v1"


class EventFormatError(ValueError):
    """Malformed or out-of-contract event data."""


class Polarity(Enum):
    NEGATIVE = 0
    POSITIVE = 1


@dataclass(frozen=True)
class Event:
    t_us: int
    x: int
    y: int
    polarity: Polarity


@dataclass(frozen=True)
class SensorGeometry:
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise EventFormatError(f"degenerate sensor geometry {self.width}x{self.height}")


@dataclass
class EventStream:
    """Columnar event stream. Arrays always share one length."""

    geometry: SensorGeometry
    t_us: np.ndarray = field(default_factory=lambda: np.empty(0, np.uint64))
    x: np.ndarray = field(default_factory=lambda: np.empty(0, np.uint16))
    y: np.ndarray = field(default_factory=lambda: np.empty(0, np.uint16))
    polarity: np.ndarray = field(default_factory=lambda: np.empty(0, np.uint8))

    def __len__(self) -> int:
        return len(self.t_us)

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.t_us[i]), int(self.x[i]), int(self.y[i]),
                     Polarity(int(self.polarity[i])))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_arrays(cls, geometry, t_us, x, y, polarity, check=True) -> "EventStream":
        t_us = np.asarray(t_us, np.uint64)
        x = np.asarray(x, np.uint16)
        y = np.asarray(y, np.uint16)
        polarity = np.asarray(polarity, np.uint8)
        if not (len(t_us) == len(x) == len(y) == len(polarity)):
            raise EventFormatError("field arrays disagree on length")
        if check:
            _check_bounds(geometry, x, y, polarity)
        return cls(geometry, t_us, x, y, polarity)

    def duration_us(self) -> int:
        if len(self) == 0:
            return 0
        return int(self.t_us.max()) - int(self.t_us.min())


def _check_bounds(geometry: SensorGeometry, x, y, polarity):
    if len(x) == 0:
        return
    bad = np.nonzero(x >= geometry.width)[0]
    if bad.size:
        raise EventFormatError(
            f"event {bad[0]}: x={x[bad[0]]} out of bounds for width {geometry.width}")
    bad = np.nonzero(y >= geometry.height)[0]
    if bad.size:
        raise EventFormatError(
            f"event {bad[0]}: y={y[bad[0]]} out of bounds for height {geometry.height}")
    bad = np.nonzero(polarity > 1)[0]
    if bad.size:
        raise EventFormatError(f"event {bad[0]}: polarity {polarity[bad[0]]} not in {{0,1}}")


def parse_csv(data: bytes | str, geometry: SensorGeometry | None = None) -> EventStream:
    """Parse CSV event text.

    Geometry priority: explicit `geometry` argument, then a leading
    ``# width,height`` header, then the 640x480 default. Errors carry
    1-based line numbers.
    """
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise EventFormatError(f"event CSV is not UTF-8: {e}") from None
    else:
        text = data

    header_geometry = None
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if header_geometry is None:
                header_geometry = _parse_geometry_header(line)
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise EventFormatError(f"line {lineno}: expected 4 fields, got {len(parts)}")
        try:
            t = int(parts[0])
            x = int(parts[1])
            y = int(parts[2])
        except ValueError:
            raise EventFormatError(f"line {lineno}: malformed integer field") from None
        p = parts[3].strip()
        if p not in ("0", "1"):
            raise EventFormatError(f"line {lineno}: unknown polarity token {p!r}")
        if t < 0 or x < 0 or y < 0:
            raise EventFormatError(f"line {lineno}: negative field")
        rows.append((t, x, y, int(p), lineno))

    geo = geometry or header_geometry or SensorGeometry()
    for t, x, y, p, lineno in rows:
        if x >= geo.width:
            raise EventFormatError(f"line {lineno}: x={x} out of bounds for width {geo.width}")
        if y >= geo.height:
            raise EventFormatError(f"line {lineno}: y={y} out of bounds for height {geo.height}")
    if rows:
        t, x, y, p, _ = zip(*rows)
    else:
        t = x = y = p = ()
    return EventStream.from_arrays(geo, t, x, y, p, check=False)


def _parse_geometry_header(line: str) -> SensorGeometry | None:
    body = line.lstrip("#").strip()
    parts = body.split(",")
    if len(parts) != 2:
        return None
    try:
        return SensorGeometry(int(parts[0]), int(parts[1]))
    except ValueError:
        return None


def write_csv(stream: EventStream) -> bytes:
    lines = [f"# {stream.geometry.width},{stream.geometry.height}"]
    for i in range(len(stream)):
        lines.append(f"{stream.t_us[i]},{stream.x[i]},{stream.y[i]},{stream.polarity[i]}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def write_binary(stream: EventStream) -> bytes:
    header = SPKE_HEADER.pack(SPKE_MAGIC, SPKE_VERSION,
                              stream.geometry.width, stream.geometry.height)
    records = np.empty(len(stream), EVENT_RECORD_DTYPE)
    records["t_us"] = stream.t_us
    records["x"] = stream.x
    records["y"] = stream.y
    records["p"] = stream.polarity
    return header + records.tobytes()


def read_binary(data: bytes) -> EventStream:
    if len(data) < SPKE_HEADER.size:
        raise EventFormatError("file shorter than the 16-byte header")
    magic, version, width, height = SPKE_HEADER.unpack_from(data, 0)
    if magic != SPKE_MAGIC:
        raise EventFormatError(f"bad magic {magic!r}, expected {SPKE_MAGIC!r}")
    if version != SPKE_VERSION:
        raise EventFormatError(f"unsupported version {version}")
    body = data[SPKE_HEADER.size:]
    if len(body) % EVENT_RECORD_DTYPE.itemsize != 0:
        raise EventFormatError(
            f"truncated record: {len(body)} bytes is not a multiple of "
            f"{EVENT_RECORD_DTYPE.itemsize}")
    records = np.frombuffer(body, EVENT_RECORD_DTYPE)
    return EventStream.from_arrays(SensorGeometry(width, height),
                                   records["t_us"], records["x"], records["y"], records["p"])


def validate_sort(stream: EventStream) -> EventStream:
    """Stably sort events by timestamp. Idempotent, count-preserving."""
    order = np.argsort(stream.t_us, kind="stable")
    return EventStream(stream.geometry, stream.t_us[order], stream.x[order],
                       stream.y[order], stream.polarity[order])


def inject_uniform_noise(stream: EventStream, rate_events_per_sec: float,
                         seed: int) -> EventStream:
    """Add spurious background events uniform in space, time and polarity.

    Models sensor background activity as a Poisson process at
    `rate_events_per_sec` over the stream's time span; positions are
    uniform over the pixel grid. Deterministic given `seed`; rate 0 is
    the identity.
    """
    if rate_events_per_sec < 0:
        raise ValueError("noise rate must be >= 0")
    if rate_events_per_sec == 0:
        return stream
    if len(stream) == 0:
        raise EventFormatError("cannot inject noise into an empty stream: duration undefined")

    rng = np.random.default_rng(seed)
    t_min = int(stream.t_us.min())
    t_max = int(stream.t_us.max())
    duration_s = (t_max - t_min) / 1e6
    n = int(rng.poisson(rate_events_per_sec * duration_s))

    t = rng.integers(t_min, t_max + 1, size=n, dtype=np.uint64)
    x = rng.integers(0, stream.geometry.width, size=n, dtype=np.uint16)
    y = rng.integers(0, stream.geometry.height, size=n, dtype=np.uint16)
    p = rng.integers(0, 2, size=n, dtype=np.uint8)

    merged = EventStream(
        stream.geometry,
        np.concatenate([stream.t_us, t]),
        np.concatenate([stream.x, x]),
        np.concatenate([stream.y, y]),
        np.concatenate([stream.polarity, p]),
    )
    return validate_sort(merged)


def write_pose_track(t_us, poses) -> bytes:
    """Serialize a pose track: t_us int array, poses (N,6) float array."""
    poses = np.asarray(poses, np.float64)
    lines = [POSE_TRACK_HEADER]
    for i in range(len(t_us)):
        vals = ",".join(repr(float(v)) for v in poses[i])
        lines.append(f"{int(t_us[i])},{vals}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def read_pose_track(data: bytes | str) -> tuple[np.ndarray, np.ndarray]:
    """Parse a pose track CSV; returns (t_us int64 array, poses (N,6) float64)."""
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != POSE_TRACK_HEADER:
        raise EventFormatError(f"pose track must start with {POSE_TRACK_HEADER!r}")
    ts, poses = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 7:
            raise EventFormatError(f"line {lineno}: expected 7 fields, got {len(parts)}")
        try:
            ts.append(int(parts[0]))
            poses.append([float(v) for v in parts[1:]])
        except ValueError:
            raise EventFormatError(f"line {lineno}: malformed field") from None
    return np.asarray(ts, np.int64), np.asarray(poses, np.float64).reshape(-1, 6)
