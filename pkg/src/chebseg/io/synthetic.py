"""Synthetic outdoor scenes: ground, box buildings, trees, scattered clutter.

A scene spec is plain data and can live in a YAML file::

    footprint: [3.0, 2.0]        # metres along x and y
    density: 1000                # points per square metre of surface
    seed: 7
    primitives:
      - {type: ground, z_noise: 0.0}
      - {type: box, center: [0.8, 0.9], size: [0.7, 0.6, 1.8]}
      - {type: tree, center: [2.2, 1.1], trunk_radius: 0.07, trunk_height: 1.0, crown_radius: 0.4}
      - {type: scatter, center: [1.9, 0.3], size: [0.3, 0.25, 0.3]}

Each primitive gets the class of its type (ground, building, vegetation,
clutter) unless it carries an explicit ``label``. Point counts are Poisson in
density x surface area; every coordinate gets N(0, 0.01 m) jitter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..core import SYNTHETIC_LABELS, PointCloud

JITTER = 0.01

_TYPE_CLASS = {"ground": "ground", "box": "building", "tree": "vegetation", "scatter": "clutter"}
_CLASS_COLOR = {
    "ground": (120, 110, 90), "building": (200, 80, 60),
    "vegetation": (40, 160, 60), "clutter": (60, 90, 200),
}


class SceneSpecError(ValueError):
    pass


@dataclass
class SceneSpec:
    footprint: tuple = (3.0, 2.0)
    density: float = 1000.0
    seed: int = 0
    primitives: list = field(default_factory=lambda: [{"type": "ground"}])

    def __post_init__(self):
        self.footprint = tuple(float(v) for v in self.footprint)
        if len(self.footprint) != 2 or min(self.footprint) <= 0:
            raise SceneSpecError(f"footprint must be two positive extents, got {self.footprint}")
        if not self.density > 0:
            raise SceneSpecError(f"density must be > 0, got {self.density}")
        for prim in self.primitives:
            kind = prim.get("type")
            if kind not in _TYPE_CLASS:
                raise SceneSpecError(f"unknown primitive type {kind!r}")
            label = prim.get("label", _TYPE_CLASS[kind])
            if label not in SYNTHETIC_LABELS.names:
                raise SceneSpecError(f"primitive label {label!r} is not one of {SYNTHETIC_LABELS.names}")

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        known = {"footprint", "density", "seed", "primitives"}
        unknown = set(d) - known
        if unknown:
            raise SceneSpecError(f"unknown scene keys {sorted(unknown)}")
        return cls(**{k: d[k] for k in known if k in d})

    def to_dict(self) -> dict:
        return {"footprint": list(self.footprint), "density": self.density,
                "seed": self.seed, "primitives": [dict(p) for p in self.primitives]}


def _positive(prim, key, n=None):
    v = prim.get(key)
    if v is None:
        raise SceneSpecError(f"{prim['type']} primitive needs {key!r}")
    arr = np.atleast_1d(np.asarray(v, dtype=np.float64))
    if n is not None and arr.size != n:
        raise SceneSpecError(f"{prim['type']}.{key} needs {n} values")
    if np.any(arr <= 0):
        raise SceneSpecError(f"degenerate {prim['type']} primitive: {key}={v}")
    return arr if n is not None and n > 1 else float(arr[0])


def surface_area(prim: dict, footprint) -> float:
    """Area that sets the expected point count of ``prim`` (before occlusion)."""
    kind = prim["type"]
    if kind == "ground":
        return footprint[0] * footprint[1]
    if kind == "box":
        w, d, h = _positive(prim, "size", 3)
        return 2 * (w + d) * h + w * d
    if kind == "tree":
        r, h = _positive(prim, "trunk_radius"), _positive(prim, "trunk_height")
        cr = _positive(prim, "crown_radius")
        return 2 * math.pi * r * h + 4 * math.pi * cr * cr
    w, d, h = _positive(prim, "size", 3)
    return 2 * (w * d + w * h + d * h)


def _sample_ground(rng, n, footprint, prim):
    x = rng.uniform(0, footprint[0], n)
    y = rng.uniform(0, footprint[1], n)
    z = rng.normal(0.0, float(prim.get("z_noise", 0.0)), n) if prim.get("z_noise") else np.zeros(n)
    return np.column_stack([x, y, z])


def _sample_box(rng, n, prim):
    cx, cy = prim["center"]
    w, d, h = _positive(prim, "size", 3)
    areas = np.array([w * h, w * h, d * h, d * h, w * d])
    face = rng.choice(5, size=n, p=areas / areas.sum())
    u, v = rng.random(n), rng.random(n)
    x0, y0 = cx - w / 2, cy - d / 2
    pts = np.empty((n, 3))
    # faces: y-, y+, x-, x+, roof
    for f, (px, py, pz) in enumerate([
        (x0 + u * w, np.full(n, y0), v * h),
        (x0 + u * w, np.full(n, y0 + d), v * h),
        (np.full(n, x0), y0 + u * d, v * h),
        (np.full(n, x0 + w), y0 + u * d, v * h),
        (x0 + u * w, y0 + v * d, np.full(n, h)),
    ]):
        sel = face == f
        pts[sel] = np.column_stack([px, py, pz])[sel]
    return pts


def _sample_sphere(rng, n, center, radius):
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return np.asarray(center) + radius * v


def _sample_tree(rng, n_trunk, n_crown, prim):
    cx, cy = prim["center"]
    r, h = _positive(prim, "trunk_radius"), _positive(prim, "trunk_height")
    cr = _positive(prim, "crown_radius")
    phi = rng.uniform(0, 2 * math.pi, n_trunk)
    trunk = np.column_stack([cx + r * np.cos(phi), cy + r * np.sin(phi), rng.uniform(0, h, n_trunk)])
    crown = _sample_sphere(rng, n_crown, (cx, cy, h + 0.6 * cr), cr)
    return np.vstack([trunk, crown])


def _sample_scatter(rng, n, prim):
    cx, cy = prim["center"]
    w, d, h = _positive(prim, "size", 3)
    return np.column_stack([
        rng.uniform(cx - w / 2, cx + w / 2, n),
        rng.uniform(cy - d / 2, cy + d / 2, n),
        rng.uniform(0, h, n),
    ])


def generate_scene(spec: SceneSpec) -> PointCloud:
    """Deterministic labelled cloud for ``spec``; attributes are per-class RGB colours."""
    rng = np.random.default_rng(spec.seed)
    fx, fy = spec.footprint
    boxes = [p for p in spec.primitives if p["type"] == "box"]
    chunks, labels = [], []
    for prim in spec.primitives:
        kind = prim["type"]
        cls = SYNTHETIC_LABELS.index(prim.get("label", _TYPE_CLASS[kind]))
        area = surface_area(prim, spec.footprint)
        if kind == "ground":
            pts = _sample_ground(rng, rng.poisson(spec.density * area), spec.footprint, prim)
            for b in boxes:
                # ground under a building is never observed
                w, d, _ = b["size"]
                inside = (np.abs(pts[:, 0] - b["center"][0]) < w / 2) & (np.abs(pts[:, 1] - b["center"][1]) < d / 2)
                pts = pts[~inside]
        elif kind == "box":
            pts = _sample_box(rng, rng.poisson(spec.density * area), prim)
        elif kind == "tree":
            r, h = prim["trunk_radius"], prim["trunk_height"]
            cr = prim["crown_radius"]
            pts = _sample_tree(
                rng,
                rng.poisson(spec.density * 2 * math.pi * r * h),
                rng.poisson(spec.density * 4 * math.pi * cr * cr),
                prim,
            )
        else:
            pts = _sample_scatter(rng, rng.poisson(spec.density * area), prim)
        chunks.append(pts)
        labels.append(np.full(len(pts), cls, dtype=np.int64))
    xyz = np.vstack(chunks) if chunks else np.empty((0, 3))
    lab = np.concatenate(labels) if labels else np.empty(0, np.int64)
    xyz = xyz + rng.normal(0.0, JITTER, xyz.shape)
    # keep the scene on its footprint so the block grid has no sliver cells
    xyz[:, 0] = np.clip(xyz[:, 0], 0.0, np.nextafter(fx, 0))
    xyz[:, 1] = np.clip(xyz[:, 1], 0.0, np.nextafter(fy, 0))
    colors = np.array([_CLASS_COLOR[n] for n in SYNTHETIC_LABELS.names], dtype=np.float64)
    return PointCloud(xyz, colors[lab] if len(lab) else np.empty((0, 3)), lab)


def random_scene_spec(rng: np.random.Generator, footprint=(3.0, 2.0), target_points: int = 20000,
                      n_clutter=(2, 3)) -> SceneSpec:
    """One building, one tree and a few clutter piles at random non-overlapping spots.

    Object footprints stay below 1 m so every grid cell they touch still sees ground.
    """
    fx, fy = footprint
    placed = []

    def place(half_w, half_d, margin=0.05):
        for _ in range(1000):
            cx = rng.uniform(half_w + margin, fx - half_w - margin)
            cy = rng.uniform(half_d + margin, fy - half_d - margin)
            if all(abs(cx - px) > half_w + pw + margin or abs(cy - py) > half_d + pd + margin
                   for px, py, pw, pd in placed):
                placed.append((cx, cy, half_w, half_d))
                return [float(cx), float(cy)]
        raise SceneSpecError("could not place objects without overlap; enlarge the footprint")

    prims = [{"type": "ground"}]
    w, d = rng.uniform(0.5, 0.9, 2)
    prims.append({"type": "box", "center": place(w / 2, d / 2), "size": [float(w), float(d), float(rng.uniform(1.0, 2.2))]})
    cr = float(rng.uniform(0.3, 0.45))
    prims.append({"type": "tree", "center": place(cr, cr), "trunk_radius": float(rng.uniform(0.05, 0.09)),
                  "trunk_height": float(rng.uniform(0.8, 1.4)), "crown_radius": cr})
    for _ in range(int(rng.integers(n_clutter[0], n_clutter[1] + 1))):
        sw, sd = rng.uniform(0.15, 0.35, 2)
        prims.append({"type": "scatter", "center": place(sw / 2, sd / 2),
                      "size": [float(sw), float(sd), float(rng.uniform(0.15, 0.4))]})
    area = sum(surface_area(p, footprint) for p in prims)
    for b in (p for p in prims if p["type"] == "box"):
        area -= b["size"][0] * b["size"][1]
    return SceneSpec(footprint=footprint, density=target_points / area,
                     seed=int(rng.integers(2**31)), primitives=prims)


def synthetic_dataset(n_scenes: int, seed: int = 0, footprint=(3.0, 2.0), target_points: int = 20000):
    """``n_scenes`` independent random scenes."""
    rng = np.random.default_rng(seed)
    return [generate_scene(random_scene_spec(rng, footprint, target_points)) for _ in range(n_scenes)]
