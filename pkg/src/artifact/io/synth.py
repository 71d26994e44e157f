"""Synthetic static shapes and moving-shape clips.

Each static class is the surface of one primitive, scaled analytically into
the unit ball.  Each dynamic class applies a motion program to a base shape.
Clockwise and counter-clockwise rotation are time reversals of one another,
so every individual frame of one class is equally likely under the other.
"""
from __future__ import annotations

import numpy as np

from artifact.errors import TooFewFrames, TooManyClasses
from artifact.io.formats import ClipSet, CloudSet
from artifact.numcore.rng import RngState

MIN_CLASSES, MAX_CLASSES = 2, 16
ROTATION_STEP = np.deg2rad(20.0)  # per frame


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _sphere(n, rng):
    # antipodal pairs (plus one balanced triple when n is odd) keep the
    # centroid at the origin exactly
    if n < 2:
        return _unit(rng.normal(size=(max(n, 0), 3)))
    triple = n % 2
    half = (n - 3 * triple) // 2
    d = _unit(rng.normal(size=(half, 3)))
    parts = [d, -d]
    if triple:
        ang = rng.uniform(0.0, 2 * np.pi) + np.array([0.0, 2 * np.pi / 3, 4 * np.pi / 3])
        a = _unit(rng.normal(size=3))
        b = _unit(np.cross(a, rng.normal(size=3)))
        c = np.cross(a, b)
        parts.append(np.cos(ang)[:, None] * b + np.sin(ang)[:, None] * c)
    return np.concatenate(parts)


def _cube(n, rng):
    u = rng.uniform(-1.0, 1.0, size=(n, 3))
    face = rng.integers(0, 3, size=n)
    u[np.arange(n), face] = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return u / np.sqrt(3.0)


def _cylinder(n, rng):
    t = rng.uniform(0, 2 * np.pi, n)
    return np.stack([0.6 * np.cos(t), 0.6 * np.sin(t), rng.uniform(-0.8, 0.8, n)], axis=1)


def _plane(n, rng):
    s = 1.0 / np.sqrt(2.0)
    return np.stack([rng.uniform(-s, s, n), rng.uniform(-s, s, n), np.zeros(n)], axis=1)


def _torus(n, rng):
    u, v = rng.uniform(0, 2 * np.pi, n), rng.uniform(0, 2 * np.pi, n)
    ring = 0.7 + 0.3 * np.cos(v)
    return np.stack([ring * np.cos(u), ring * np.sin(u), 0.3 * np.sin(v)], axis=1)


def _cone(n, rng):
    h = np.sqrt(rng.random(n))  # area grows with distance from the apex
    t = rng.uniform(0, 2 * np.pi, n)
    return np.stack([0.8 * h * np.cos(t), 0.8 * h * np.sin(t), 0.6 - 1.2 * h], axis=1)


def _ellipsoid(n, rng):
    return _unit(rng.normal(size=(n, 3))) * np.array([1.0, 0.6, 0.35])


def _triangles(n, rng, tris):
    tris = np.asarray(tris, dtype=np.float64)
    area = 0.5 * np.linalg.norm(np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]), axis=1)
    pick = np.searchsorted(np.cumsum(area / area.sum()), rng.random(n), side="right")
    pick = np.minimum(pick, len(tris) - 1)
    r1, r2 = np.sqrt(rng.random(n)), rng.random(n)
    a, b, c = tris[pick, 0], tris[pick, 1], tris[pick, 2]
    return (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c


def _pyramid(n, rng):
    w, top, base = 0.65, np.array([0.0, 0.0, 0.7]), -0.3
    c = [np.array([sx * w, sy * w, base]) for sx, sy in ((-1, -1), (1, -1), (1, 1), (-1, 1))]
    tris = [(top, c[i], c[(i + 1) % 4]) for i in range(4)] + [(c[0], c[1], c[2]), (c[0], c[2], c[3])]
    return _triangles(n, rng, tris)


def _disk(n, rng):
    r, t = np.sqrt(rng.random(n)), rng.uniform(0, 2 * np.pi, n)
    return np.stack([r * np.cos(t), r * np.sin(t), np.zeros(n)], axis=1)


def _ring(n, rng):
    t = rng.uniform(0, 2 * np.pi, n)
    return np.stack([np.cos(t), np.sin(t), np.zeros(n)], axis=1)


def _capsule(n, rng):
    # radius 0.4 tube of half-length 0.6 along x with hemispherical caps
    side = 2 * np.pi * 0.4 * 1.2
    caps = 4 * np.pi * 0.16
    on_side = rng.random(n) < side / (side + caps)
    t = rng.uniform(0, 2 * np.pi, n)
    tube = np.stack([rng.uniform(-0.6, 0.6, n), 0.4 * np.cos(t), 0.4 * np.sin(t)], axis=1)
    d = _unit(rng.normal(size=(n, 3))) * 0.4
    cap = d + np.stack([np.sign(d[:, 0]) * 0.6, np.zeros(n), np.zeros(n)], axis=1)
    return np.where(on_side[:, None], tube, cap)


def _tetrahedron(n, rng):
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=np.float64) / np.sqrt(3.0)
    return _triangles(n, rng, [(v[0], v[1], v[2]), (v[0], v[1], v[3]), (v[0], v[2], v[3]), (v[1], v[2], v[3])])


def _octahedron(n, rng):
    e = np.eye(3)
    tris = [(sx * e[0], sy * e[1], sz * e[2]) for sx in (1, -1) for sy in (1, -1) for sz in (1, -1)]
    return _triangles(n, rng, tris)


def _helix(n, rng):
    t = rng.random(n)
    a = 6 * np.pi * t
    return np.stack([0.6 * np.cos(a), 0.6 * np.sin(a), 0.8 * (2 * t - 1)], axis=1)


def _line(n, rng):
    return np.stack([rng.uniform(-1, 1, n), np.zeros(n), np.zeros(n)], axis=1)


def _paraboloid(n, rng):
    r, t = 0.8 * np.sqrt(rng.random(n)), rng.uniform(0, 2 * np.pi, n)
    return np.stack([r * np.cos(t), r * np.sin(t), r * r - 0.5], axis=1)


PRIMITIVES = {
    "sphere": _sphere, "cube": _cube, "cylinder": _cylinder, "plane": _plane,
    "torus": _torus, "cone": _cone, "ellipsoid": _ellipsoid, "pyramid": _pyramid,
    "disk": _disk, "ring": _ring, "capsule": _capsule, "tetrahedron": _tetrahedron,
    "octahedron": _octahedron, "helix": _helix, "line": _line, "paraboloid": _paraboloid,
}
PRIMITIVE_NAMES = tuple(PRIMITIVES)

MOTIONS = ("translate", "rotate_cw", "oscillate", "expand", "rotate_ccw", "contract")
MOTION_BASES = ("ellipsoid", "cube", "tetrahedron")


def sample_primitive(name: str, n: int, rng: RngState) -> np.ndarray:
    return PRIMITIVES[name](n, rng)


def _check_classes(classes: int) -> None:
    if not MIN_CLASSES <= classes <= MAX_CLASSES:
        raise TooManyClasses(f"classes must lie in [{MIN_CLASSES}, {MAX_CLASSES}], got {classes}")


def gen_synth_static(classes: int, per_class: int, points: int, noise: float,
                     rng: RngState) -> CloudSet:
    """``per_class`` jittered clouds of each of the first ``classes`` primitives."""
    _check_classes(classes)
    clouds = np.zeros((classes * per_class, points, 3))
    labels = np.repeat(np.arange(classes), per_class)
    for i, c in enumerate(labels):
        r = rng.child("static", i)
        clouds[i] = sample_primitive(PRIMITIVE_NAMES[c], points, r)
        if noise > 0:
            clouds[i] += r.normal(0.0, noise, size=(points, 3))
    return CloudSet(clouds, labels.astype(np.int64), classes)


def _rot_z(theta: np.ndarray) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    out = np.zeros(theta.shape + (3, 3))
    out[..., 0, 0], out[..., 0, 1], out[..., 1, 0], out[..., 1, 1] = c, -s, s, c
    out[..., 2, 2] = 1.0
    return out


def apply_motion(base: np.ndarray, program: str, frames: int, rng: RngState) -> np.ndarray:
    """Clip (T, P, 3) from a base cloud; the start phase is random per clip."""
    t = np.arange(frames, dtype=np.float64)
    phase = rng.uniform(0.0, 2 * np.pi)
    oriented = base @ _rot_z(np.array(phase)).T
    if program in ("rotate_cw", "rotate_ccw"):
        rots = _rot_z(-ROTATION_STEP * t)                  # clockwise seen from +z
        clip = np.einsum("tij,pj->tpi", rots, oriented)
        return clip[::-1].copy() if program == "rotate_ccw" else clip
    if program == "translate":
        step = np.array([0.08, 0.0, 0.0]) @ _rot_z(np.array(phase)).T
        return oriented[None] + (t - (frames - 1) / 2)[:, None, None] * step
    if program == "oscillate":
        shift = 0.3 * np.sin(2 * np.pi * t / frames + rng.uniform(0, 2 * np.pi))
        return oriented[None] + shift[:, None, None] * np.array([0.0, 0.0, 1.0])
    if program == "expand":
        return oriented[None] * (0.7 + 0.06 * t)[:, None, None]
    if program == "contract":
        return oriented[None] * (0.7 + 0.06 * t[::-1])[:, None, None]
    raise ValueError(f"unknown motion program {program!r}")


def class_program(task: str, cls: int) -> tuple[str, str]:
    """(motion, base shape) for a dynamic class."""
    if task == "rotation":
        return ("rotate_cw", "rotate_ccw")[cls], "ellipsoid"
    if task != "motion":
        raise ValueError(f"unknown task {task!r}")
    return MOTIONS[cls % len(MOTIONS)], MOTION_BASES[cls // len(MOTIONS)]


def gen_synth_dynamic(classes: int, per_class: int, frames: int, points: int, noise: float,
                      rng: RngState, task: str = "motion") -> ClipSet:
    """Clips of moving primitives; ``task="rotation"`` gives the two-class
    clockwise / counter-clockwise problem."""
    _check_classes(classes)
    if task == "rotation" and classes != 2:
        raise TooManyClasses(f"the rotation task has exactly 2 classes, got {classes}")
    if frames < 2:
        raise TooFewFrames(f"clips need at least 2 frames, got {frames}")
    clips = np.zeros((classes * per_class, frames, points, 3))
    labels = np.repeat(np.arange(classes), per_class)
    for i, c in enumerate(labels):
        r = rng.child("clip", i)
        motion, base = class_program(task, int(c))
        clips[i] = apply_motion(sample_primitive(base, points, r), motion, frames, r)
        if noise > 0:
            clips[i] += r.normal(0.0, noise, size=(frames, points, 3))
    return ClipSet(clips, labels.astype(np.int64), classes)
