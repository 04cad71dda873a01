"""Synthetic two-view scenes with known ground-truth pose."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import RigidTransform, apply_transform, rotation_about_axis

DEPTH = 0.8  # floor depth (y), m
OBJECTS_PER_M = 12.0
# expected surface area of one object, averaged over the three kinds below
OBJECT_AREA = (
    0.215**2 + 4 * 0.215**2  # box: top plus four sides, sides ~ U(0.08, 0.35)
    + 4 * np.pi * (0.18**3 - 0.05**3) / (3 * 0.13)  # sphere, r ~ U(0.05, 0.18)
    + 0.275 * 0.35  # panel
) / 3
# No back wall: a floor/wall corner is close to symmetric under a half turn,
# which lets low-overlap pairs lock onto the flipped pose.


@dataclass
class SyntheticScene:
    source: np.ndarray
    target: np.ndarray
    gt: RigidTransform
    overlap: float
    measured_overlap: float = float("nan")


def _rect(rng, origin, e1, e2, n):
    u = rng.random((n, 1))
    v = rng.random((n, 1))
    return origin + u * e1 + v * e2


def _surfaces(rng, length):
    """List of ``(area, sampler)`` for the floor and random objects on it."""
    surfaces = []

    def rect(origin, e1, e2):
        origin, e1, e2 = (np.asarray(a, dtype=np.float64) for a in (origin, e1, e2))
        area = np.linalg.norm(np.cross(e1, e2))
        surfaces.append((area, lambda n, o=origin, a=e1, b=e2: _rect(rng, o, a, b, n)))

    rect([0, 0, 0], [length, 0, 0], [0, DEPTH, 0])

    n_obj = max(1, int(round(OBJECTS_PER_M * length)))
    for _ in range(n_obj):
        cx = rng.uniform(0.0, length)
        cy = rng.uniform(0.15, DEPTH - 0.15)
        kind = rng.integers(3)
        if kind == 0:  # box resting on the floor, random yaw
            sx, sy, sz = rng.uniform(0.08, 0.35, size=3)
            rot = rotation_about_axis([0, 0, 1], rng.uniform(0, np.pi))
            c = np.array([cx, cy, 0.0])
            hx, hy = rot[:, 0] * sx, rot[:, 1] * sy
            hz = np.array([0.0, 0.0, sz])
            base = c - hx / 2 - hy / 2
            rect(base + hz, hx, hy)  # top
            rect(base, hx, hz)
            rect(base + hy, hx, hz)
            rect(base, hy, hz)
            rect(base + hx, hy, hz)
        elif kind == 1:  # sphere sitting on the floor
            r = rng.uniform(0.05, 0.18)
            centre = np.array([cx, cy, r])

            def sphere(n, c=centre, rad=r):
                d = rng.normal(size=(n, 3))
                return c + rad * d / np.linalg.norm(d, axis=1, keepdims=True)

            surfaces.append((4 * np.pi * r * r, sphere))
        else:  # leaning panel
            w = rng.uniform(0.15, 0.4)
            h = rng.uniform(0.2, 0.5)
            yaw = rng.uniform(0, np.pi)
            tilt = rng.uniform(0.2, 1.2)
            a = np.array([np.cos(yaw), np.sin(yaw), 0.0]) * w
            up = np.array([-np.sin(yaw) * np.cos(tilt), np.cos(yaw) * np.cos(tilt), np.sin(tilt)]) * h
            rect(np.array([cx, cy, 0.0]) - a / 2, a, up)
    return surfaces


def _sample_surfaces(rng, surfaces, n):
    areas = np.array([a for a, _ in surfaces])
    counts = rng.multinomial(n, areas / areas.sum())
    parts = [fn(c) for (_, fn), c in zip(surfaces, counts) if c > 0]
    return np.concatenate(parts, axis=0)


def measure_overlap(source, target, gt: RigidTransform, tau: float) -> float:
    """Fraction of ``source`` with a ``target`` point closer than ``tau`` under ``gt``."""
    d, _ = cKDTree(target).query(apply_transform(gt, source), k=1)
    return float(np.count_nonzero(d < tau) / len(source))


def generate_scene(seed: int, n_points: int = 5000, overlap: float = 0.7,
                   noise_sigma: float = 0.0, transform_magnitude: float = 0.5,
                   spacing: float = 0.05) -> SyntheticScene:
    """Two overlapping views of a random cluttered floor strip.

    Points are drawn uniformly (by area) from a floor strip cluttered with
    boxes, spheres and leaning panels, at roughly one point per
    ``spacing x spacing`` cell. Both views are windows of ``n_points`` along x;
    the window offset is chosen so the overlap measured at ``2 * spacing``
    matches ``overlap``. Both views are centred on the source centroid, the
    target is moved by a random rotation of ``transform_magnitude * pi`` rad
    about a random axis plus a translation of length ``transform_magnitude``
    m, then both views get isotropic Gaussian noise. ``gt`` maps source
    coordinates into the target frame.
    """
    if not 0 < overlap <= 1:
        raise ValueError("overlap must lie in (0, 1]")
    if n_points < 1:
        raise ValueError("n_points must be positive")
    rng = np.random.default_rng(seed)
    total = 2 * n_points
    per_metre = (DEPTH + OBJECTS_PER_M * OBJECT_AREA) / spacing**2
    length = total / per_metre
    base = _sample_surfaces(rng, _surfaces(rng, length), total)
    base = base[np.argsort(base[:, 0], kind="stable")]

    view_a = base[:n_points]
    tau = 2 * spacing
    if overlap >= 1:
        shift = 0
    else:
        # measured overlap falls monotonically with the window shift; bisect on it
        lo, hi = 0, n_points
        while hi - lo > 1:
            mid = (lo + hi) // 2
            d, _ = cKDTree(base[mid:mid + n_points]).query(view_a, k=1)
            if np.count_nonzero(d < tau) / n_points > overlap:
                lo = mid
            else:
                hi = mid
        shift = hi
    view_b = base[shift:shift + n_points]

    axis = rng.normal(size=3)
    rot = rotation_about_axis(axis, transform_magnitude * np.pi)
    direction = rng.normal(size=3)
    trans = transform_magnitude * direction / np.linalg.norm(direction)
    gt = RigidTransform(rot, trans)

    # express both views about the source centroid, as a sensor frame would be
    centre = view_a.mean(axis=0)
    source = view_a - centre
    target = apply_transform(gt, view_b - centre)
    if noise_sigma > 0:
        source = source + rng.normal(scale=noise_sigma, size=source.shape)
        target = target + rng.normal(scale=noise_sigma, size=target.shape)
    measured = measure_overlap(source, target, gt, tau)
    return SyntheticScene(source, target, gt, float(overlap), measured)
