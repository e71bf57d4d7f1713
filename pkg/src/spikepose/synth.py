"""Synthetic labeled event streams from a wireframe mock target.

A cuboid-with-panels wireframe is pinhole-projected at 1 kHz micro-steps
along a linear approach and/or single-axis tumble trajectory. Pixels whose
edge coverage appears emit positive events, pixels whose coverage vanishes
emit negative events; per-crossing counts are Poisson at the configured
rate. The pose track is sampled at 10 Hz so each 100 ms window has an
exact ground-truth pose at its boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .events import EventStream, SensorGeometry, validate_sort
from .frames import Pose6D
from .geometry import rotvec_to_matrix


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class Wireframe:
    vertices: np.ndarray  # (V,3)
    edges: np.ndarray  # (E,2) vertex indices


def box_with_panels(body: float = 1.0, panel_span: float = 1.2,
                    panel_width: float = 0.6) -> Wireframe:
    """Satellite mock-up: body cuboid, two unequal side panels, one antenna.

    The unequal spans and the antenna boom break every rotational symmetry
    so a projected view determines the orientation uniquely.
    """
    b = body / 2.0
    verts = [(x, y, z) for x in (-b, b) for y in (-b, b) for z in (-b, b)]
    edges = []
    for i in range(8):
        for j in range(i + 1, 8):
            # cuboid edge when exactly one coordinate differs
            if sum(a != c for a, c in zip(verts[i], verts[j])) == 1:
                edges.append((i, j))
    w = panel_width / 2.0
    for side, span in ((1.0, panel_span), (-1.0, 0.6 * panel_span)):
        base = len(verts)
        y0, y1 = side * b, side * (b + span)
        verts.extend([(-w, y0, 0.0), (w, y0, 0.0), (w, y1, 0.0), (-w, y1, 0.0)])
        edges.extend([(base, base + 1), (base + 1, base + 2),
                      (base + 2, base + 3), (base + 3, base)])
    base = len(verts)
    verts.extend([(b, b, b), (b + 0.8 * body, b + 0.4 * body, b)])
    edges.append((base, base + 1))
    return Wireframe(np.asarray(verts, np.float64), np.asarray(edges, np.int64))


@dataclass(frozen=True)
class SceneConfig:
    start_pose: Pose6D
    end_pose: Pose6D
    duration_s: float
    geometry: SensorGeometry = SensorGeometry(640, 480)
    wireframe: Wireframe = field(default_factory=box_with_panels)
    events_per_edge_pixel: float = 0.6
    focal_px: float | None = None  # default: matches sensor width
    seed: int = 0
    micro_step_hz: int = 1000
    pose_rate_hz: int = 10

    def __post_init__(self):
        if self.duration_s <= 0:
            raise SynthError("duration must be > 0")
        if self.events_per_edge_pixel < 0:
            raise SynthError("event rate must be >= 0")


def _pose_at(config: SceneConfig, t_s: float) -> np.ndarray:
    """Linear interpolation of translation and rotation-vector components."""
    a = min(max(t_s / config.duration_s, 0.0), 1.0)
    p0 = config.start_pose.as_vector()
    p1 = config.end_pose.as_vector()
    return (1.0 - a) * p0 + a * p1


def _rasterize(config: SceneConfig, pose: np.ndarray) -> np.ndarray:
    """Flat pixel indices covered by projected wireframe edges."""
    geo = config.geometry
    f = config.focal_px if config.focal_px is not None else float(geo.width)
    cx, cy = geo.width / 2.0, geo.height / 2.0
    rot = rotvec_to_matrix(pose[3:])
    pts = config.wireframe.vertices @ rot.T + pose[:3]

    covered: list[np.ndarray] = []
    for i, j in config.wireframe.edges:
        p0, p1 = pts[i], pts[j]
        if p0[2] <= 0.05 and p1[2] <= 0.05:
            continue
        # projected edge length decides the 3-d sample density (<= ~0.5 px)
        def proj(p):
            z = max(p[2], 0.05)
            return np.array([f * p[0] / z + cx, f * p[1] / z + cy])

        approx = np.linalg.norm(proj(p1) - proj(p0))
        n = int(min(max(approx * 2.0, 2), 4096))
        ts = np.linspace(0.0, 1.0, n)
        seg = p0[None, :] * (1.0 - ts[:, None]) + p1[None, :] * ts[:, None]
        z = seg[:, 2]
        ok = z > 0.05
        if not ok.any():
            continue
        seg = seg[ok]
        u = np.rint(f * seg[:, 0] / seg[:, 2] + cx).astype(np.int64)
        v = np.rint(f * seg[:, 1] / seg[:, 2] + cy).astype(np.int64)
        inside = (u >= 0) & (u < geo.width) & (v >= 0) & (v < geo.height)
        if inside.any():
            covered.append(v[inside] * geo.width + u[inside])
    if not covered:
        return np.empty(0, np.int64)
    return np.unique(np.concatenate(covered))


def synth_generate(config: SceneConfig) -> tuple[EventStream, tuple[np.ndarray, np.ndarray]]:
    """Render the trajectory into an event stream plus its 10 Hz pose track."""
    rng = np.random.default_rng(config.seed)
    micro_dt_us = int(round(1e6 / config.micro_step_hz))
    n_steps = int(round(config.duration_s * config.micro_step_hz))

    ts, xs, ys, ps = [], [], [], []
    prev = _rasterize(config, _pose_at(config, 0.0))
    ever_visible = prev.size > 0
    for k in range(1, n_steps + 1):
        cur = _rasterize(config, _pose_at(config, k / config.micro_step_hz))
        ever_visible = ever_visible or cur.size > 0
        appeared = np.setdiff1d(cur, prev, assume_unique=True)
        vanished = np.setdiff1d(prev, cur, assume_unique=True)
        t_base = (k - 1) * micro_dt_us
        for pixels, polarity in ((appeared, 1), (vanished, 0)):
            if pixels.size == 0:
                continue
            counts = rng.poisson(config.events_per_edge_pixel, pixels.size)
            reps = np.repeat(pixels, counts)
            if reps.size == 0:
                continue
            jitter = rng.integers(0, micro_dt_us, reps.size)
            ts.append(t_base + jitter)
            xs.append(reps % config.geometry.width)
            ys.append(reps // config.geometry.width)
            ps.append(np.full(reps.size, polarity, np.uint8))
        prev = cur

    if not ever_visible:
        raise SynthError("trajectory never enters the field of view")

    if ts:
        stream = EventStream.from_arrays(
            config.geometry,
            np.concatenate(ts).astype(np.uint64),
            np.concatenate(xs).astype(np.uint16),
            np.concatenate(ys).astype(np.uint16),
            np.concatenate(ps),
        )
        stream = validate_sort(stream)
    else:
        stream = EventStream(config.geometry)

    n_poses = int(round(config.duration_s * config.pose_rate_hz)) + 1
    pose_t = (np.arange(n_poses) * (1e6 / config.pose_rate_hz)).astype(np.int64)
    poses = np.stack([_pose_at(config, t / 1e6) for t in pose_t])
    return stream, (pose_t, poses)
