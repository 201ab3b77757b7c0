"""Analytic test shapes, pose sampling, partial views and corruption.

Conventions used throughout the package:

* points are mapped as ``x -> R @ x + t`` (column-vector convention; with
  row-stacked arrays this is ``P @ R.T + t``), normals as ``n -> R @ n``;
* rotations come from extrinsic x -> y -> z Euler angles,
  ``R = Rz(gamma) @ Ry(beta) @ Rx(alpha)``;
* every shape fits inside [-0.9, 0.9]^3 in its canonical frame (actually
  inside the ball of radius 0.85, so any rotation plus a translation of up
  to 0.1 per axis stays inside the [-1, 1]^3 working domain);
* randomness flows through counter-based Philox streams keyed by
  ``(seed, tags...)`` so that every consumer draws from its own
  reproducible stream regardless of call order.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .autodiff import Tensor, concat
from .validate import as_points, as_vector3


# ---------------------------------------------------------------------------
# deterministic splittable randomness


def make_rng(seed: int, *tags) -> np.random.Generator:
    """Philox stream keyed by (seed, tags...); tags may be str or int."""
    words = [int(seed) & 0xFFFFFFFF]
    for tag in tags:
        if isinstance(tag, str):
            words.append(zlib.crc32(tag.encode("utf-8")))
        else:
            words.append(int(tag) & 0xFFFFFFFF)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


# ---------------------------------------------------------------------------
# rotations and poses


def euler_to_rotation(omega) -> np.ndarray:
    """3x3 rotation from extrinsic x->y->z Euler angles (alpha, beta, gamma)."""
    a, b, g = np.asarray(omega, dtype=np.float64).reshape(3)
    ca, sa = np.cos(a), np.sin(a)
    cb, sb = np.cos(b), np.sin(b)
    cg, sg = np.cos(g), np.sin(g)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]])
    ry = np.array([[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]])
    rz = np.array([[cg, -sg, 0.0], [sg, cg, 0.0], [0.0, 0.0, 1.0]])
    return rz @ ry @ rx


def euler_to_rotation_t(omega: Tensor) -> Tensor:
    """Tape version of :func:`euler_to_rotation` for a 3-vector tensor."""
    a = omega[0].reshape((1,))
    b = omega[1].reshape((1,))
    g = omega[2].reshape((1,))
    one = Tensor(np.ones(1))
    zero = Tensor(np.zeros(1))

    def row(x, y, z):
        return concat([x, y, z]).reshape((1, 3))

    ca, sa = a.cos(), a.sin()
    cb, sb = b.cos(), b.sin()
    cg, sg = g.cos(), g.sin()
    rx = concat([row(one, zero, zero), row(zero, ca, -sa), row(zero, sa, ca)])
    ry = concat([row(cb, zero, sb), row(zero, one, zero), row(-sb, zero, cb)])
    rz = concat([row(cg, -sg, zero), row(sg, cg, zero), row(zero, zero, one)])
    return rz @ ry @ rx


@dataclass(frozen=True)
class PoseSE3:
    """Euler angles plus translation; ``rotation`` is derived on demand."""

    omega: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", as_vector3(self.omega, "omega"))
        object.__setattr__(self, "translation",
                           as_vector3(self.translation, "translation"))

    @property
    def rotation(self) -> np.ndarray:
        return euler_to_rotation(self.omega)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """x -> R x + t for row-stacked points."""
        return points @ self.rotation.T + self.translation

    def apply_normals(self, normals: np.ndarray) -> np.ndarray:
        return normals @ self.rotation.T

    @staticmethod
    def identity() -> "PoseSE3":
        return PoseSE3(np.zeros(3), np.zeros(3))


def sample_pose(rng: np.random.Generator, rotation: str = "so3",
                trans_range: float = 0.1) -> PoseSE3:
    """Draw a random pose; angles uniform in [0, 2pi), t uniform per axis.

    ``rotation`` selects the family: "so3" draws all three Euler angles,
    "z" only the z angle (x/y kept zero), "none" keeps the identity rotation.
    """
    if rotation == "so3":
        omega = rng.uniform(0.0, 2.0 * np.pi, size=3)
    elif rotation == "z":
        omega = np.array([0.0, 0.0, rng.uniform(0.0, 2.0 * np.pi)])
    elif rotation == "none":
        omega = np.zeros(3)
    else:
        raise ValueError(f"unknown rotation family '{rotation}'")
    t = rng.uniform(-trans_range, trans_range, size=3)
    return PoseSE3(omega, t)


# ---------------------------------------------------------------------------
# analytic shapes


class AnalyticShape:
    """Signed distance + exact surface sampler for a canonical-frame shape."""

    name = "shape"

    def sdf(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def surface_points(self, n: int, rng: np.random.Generator):
        """Return (points, normals), area-weighted over the surface."""
        raise NotImplementedError

    def max_radius(self) -> float:
        """Radius of a ball around the origin that contains the shape."""
        raise NotImplementedError

    def symmetry_rotations(self):
        """Rotations leaving the shape invariant; None means all of SO(3).

        Continuous axial symmetries are returned discretized (1 degree
        steps), which bounds the induced symmetry-aware rotation error
        resolution at half a degree.
        """
        return [np.eye(3)]

    def _check_contained(self):
        if self.max_radius() > 0.9:
            raise ValueError(f"{self.name} exceeds the [-0.9, 0.9]^3 domain "
                             f"(radius {self.max_radius():.3f})")


def _unit_rows(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=1, keepdims=True)


class Sphere(AnalyticShape):
    name = "sphere"

    def __init__(self, radius: float = 0.5, center=(0.0, 0.0, 0.0)):
        self.radius = float(radius)
        self.center = as_vector3(center, "center")
        self._check_contained()

    def sdf(self, points):
        return np.linalg.norm(points - self.center, axis=1) - self.radius

    def surface_points(self, n, rng):
        dirs = _unit_rows(rng.normal(size=(n, 3)))
        return self.center + self.radius * dirs, dirs

    def max_radius(self):
        return float(np.linalg.norm(self.center)) + self.radius

    def symmetry_rotations(self):
        return None

    def area(self):
        return 4.0 * np.pi * self.radius ** 2


class Box(AnalyticShape):
    name = "box"

    def __init__(self, half_extents=(0.5, 0.35, 0.25), center=(0.0, 0.0, 0.0)):
        self.half_extents = as_vector3(half_extents, "half_extents")
        self.center = as_vector3(center, "center")
        self._check_contained()

    def sdf(self, points):
        q = np.abs(points - self.center) - self.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return outside + inside

    def surface_points(self, n, rng):
        h = self.half_extents
        # Face areas per axis (two faces each).
        areas = np.array([h[1] * h[2], h[0] * h[2], h[0] * h[1]]) * 4.0
        weights = np.repeat(areas, 2)
        weights = weights / weights.sum()
        face = rng.choice(6, size=n, p=weights)
        axis = face // 2
        sign = np.where(face % 2 == 0, 1.0, -1.0)
        uv = rng.uniform(-1.0, 1.0, size=(n, 2))
        pts = np.empty((n, 3))
        nrm = np.zeros((n, 3))
        for i in range(3):
            j, k = [a for a in range(3) if a != i]
            sel = axis == i
            pts[sel, i] = sign[sel] * h[i]
            pts[sel, j] = uv[sel, 0] * h[j]
            pts[sel, k] = uv[sel, 1] * h[k]
            nrm[sel, i] = sign[sel]
        return pts + self.center, nrm

    def max_radius(self):
        return float(np.linalg.norm(self.center) + np.linalg.norm(self.half_extents))

    def symmetry_rotations(self):
        return [np.eye(3),
                np.diag([1.0, -1.0, -1.0]),
                np.diag([-1.0, 1.0, -1.0]),
                np.diag([-1.0, -1.0, 1.0])]

    def area(self):
        h = self.half_extents
        return 8.0 * (h[0] * h[1] + h[1] * h[2] + h[0] * h[2])


class Torus(AnalyticShape):
    """Torus about the z axis with tube centerline radius ``major``."""

    name = "torus"

    def __init__(self, major: float = 0.45, minor: float = 0.18):
        if not 0.0 < minor < major:
            raise ValueError("torus needs 0 < minor < major")
        self.major = float(major)
        self.minor = float(minor)
        self._check_contained()

    def sdf(self, points):
        rho = np.linalg.norm(points[:, :2], axis=1)
        return np.sqrt((rho - self.major) ** 2 + points[:, 2] ** 2) - self.minor

    def surface_points(self, n, rng):
        pts = np.empty((n, 3))
        nrm = np.empty((n, 3))
        filled = 0
        while filled < n:
            m = 2 * (n - filled) + 16
            u = rng.uniform(0.0, 2.0 * np.pi, size=m)
            v = rng.uniform(0.0, 2.0 * np.pi, size=m)
            # Area element scales with (major + minor cos v): rejection keeps
            # the sampling exactly area-uniform.
            keep = rng.uniform(0.0, 1.0, size=m) < (
                (self.major + self.minor * np.cos(v)) / (self.major + self.minor))
            u, v = u[keep][: n - filled], v[keep][: n - filled]
            k = len(u)
            cu, su, cv, sv = np.cos(u), np.sin(u), np.cos(v), np.sin(v)
            pts[filled:filled + k, 0] = (self.major + self.minor * cv) * cu
            pts[filled:filled + k, 1] = (self.major + self.minor * cv) * su
            pts[filled:filled + k, 2] = self.minor * sv
            nrm[filled:filled + k, 0] = cv * cu
            nrm[filled:filled + k, 1] = cv * su
            nrm[filled:filled + k, 2] = sv
            filled += k
        return pts, nrm

    def max_radius(self):
        return self.major + self.minor

    def symmetry_rotations(self):
        rots = []
        flip = np.diag([1.0, -1.0, -1.0])  # Rx(pi) maps the torus to itself.
        for deg in range(360):
            rz = euler_to_rotation([0.0, 0.0, np.deg2rad(deg)])
            rots.append(rz)
            rots.append(rz @ flip)
        return rots

    def area(self):
        return 4.0 * np.pi ** 2 * self.major * self.minor


class Capsule(AnalyticShape):
    """Capsule: segment from ``a`` to ``b`` inflated by ``radius``."""

    name = "capsule"

    def __init__(self, a=(0.0, 0.0, -0.35), b=(0.0, 0.0, 0.35), radius: float = 0.22):
        self.a = as_vector3(a, "a")
        self.b = as_vector3(b, "b")
        self.radius = float(radius)
        self._axis = self.b - self.a
        self._length = float(np.linalg.norm(self._axis))
        if self._length < 1e-12:
            raise ValueError("capsule endpoints coincide")
        self._check_contained()

    def sdf(self, points):
        pa = points - self.a
        h = np.clip(pa @ self._axis / self._length ** 2, 0.0, 1.0)
        return np.linalg.norm(pa - h[:, None] * self._axis, axis=1) - self.radius

    def surface_points(self, n, rng):
        r, L = self.radius, self._length
        cyl_area = 2.0 * np.pi * r * L
        cap_area = 4.0 * np.pi * r ** 2
        u = self._axis / L
        # Orthonormal frame around the axis.
        helper = np.array([1.0, 0.0, 0.0]) if abs(u[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = np.cross(u, helper)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(u, e1)
        on_cyl = rng.uniform(0.0, 1.0, size=n) < cyl_area / (cyl_area + cap_area)
        pts = np.empty((n, 3))
        nrm = np.empty((n, 3))
        k = int(on_cyl.sum())
        phi = rng.uniform(0.0, 2.0 * np.pi, size=k)
        h = rng.uniform(0.0, 1.0, size=k)
        radial = np.outer(np.cos(phi), e1) + np.outer(np.sin(phi), e2)
        pts[on_cyl] = self.a + np.outer(h, self._axis) + r * radial
        nrm[on_cyl] = radial
        m = n - k
        dirs = _unit_rows(rng.normal(size=(m, 3)))
        side = dirs @ u
        centers = np.where(side[:, None] >= 0.0, self.b, self.a)
        pts[~on_cyl] = centers + r * dirs
        nrm[~on_cyl] = dirs
        return pts, nrm

    def max_radius(self):
        return max(np.linalg.norm(self.a), np.linalg.norm(self.b)) + self.radius

    def symmetry_rotations(self):
        # Continuous symmetry about the segment axis (plus the end-swapping
        # flip) only when the capsule is centered on the origin axis-aligned;
        # generic placements are asymmetric.
        if np.allclose(self.a, -self.b):
            u = self._axis / self._length
            rots = []
            for deg in range(360):
                ang = np.deg2rad(deg)
                rots.append(_axis_angle(u, ang))
                rots.append(_axis_angle(u, ang) @ _axis_angle(_any_perp(u), np.pi))
            return rots
        return [np.eye(3)]

    def area(self):
        return 2.0 * np.pi * self.radius * self._length + 4.0 * np.pi * self.radius ** 2


def _axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = axis / np.linalg.norm(axis)
    K = np.array([[0.0, -axis[2], axis[1]],
                  [axis[2], 0.0, -axis[0]],
                  [-axis[1], axis[0], 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def _any_perp(u: np.ndarray) -> np.ndarray:
    helper = np.array([1.0, 0.0, 0.0]) if abs(u[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    v = np.cross(u, helper)
    return v / np.linalg.norm(v)


class UnionShape(AnalyticShape):
    """Union of component shapes; the field is the min of component fields.

    The min is the exact signed distance outside the union and a lower bound
    inside overlaps, which is the usual convention for composed primitives.
    """

    name = "union"

    def __init__(self, components):
        if len(components) < 2:
            raise ValueError("union needs at least two components")
        self.components = list(components)
        self._check_contained()

    def sdf(self, points):
        return np.min([c.sdf(points) for c in self.components], axis=0)

    def surface_points(self, n, rng):
        areas = np.array([c.area() for c in self.components])
        weights = areas / areas.sum()
        pts = np.empty((n, 3))
        nrm = np.empty((n, 3))
        filled = 0
        while filled < n:
            m = 2 * (n - filled) + 16
            which = rng.choice(len(self.components), size=m, p=weights)
            cand_p = np.empty((m, 3))
            cand_n = np.empty((m, 3))
            for i, c in enumerate(self.components):
                sel = which == i
                if sel.any():
                    p, nn = c.surface_points(int(sel.sum()), rng)
                    cand_p[sel] = p
                    cand_n[sel] = nn
            # Keep only points not strictly inside any other component.
            keep = np.ones(m, dtype=bool)
            for i, c in enumerate(self.components):
                inside = c.sdf(cand_p) < -1e-9
                keep &= ~(inside & (which != i))
            cand_p, cand_n = cand_p[keep][: n - filled], cand_n[keep][: n - filled]
            k = len(cand_p)
            pts[filled:filled + k] = cand_p
            nrm[filled:filled + k] = cand_n
            filled += k
        return pts, nrm

    def max_radius(self):
        return max(c.max_radius() for c in self.components)

    def area(self):
        return float(sum(c.area() for c in self.components))


# ---------------------------------------------------------------------------
# named presets and per-family randomized instances


def make_shape(name: str) -> AnalyticShape:
    """Named canonical shapes; asym1..asym3 have no rotational symmetry."""
    presets = {
        "sphere": lambda: Sphere(0.5),
        "box": lambda: Box((0.5, 0.35, 0.25)),
        "torus": lambda: Torus(0.45, 0.18),
        "capsule": lambda: Capsule((0.0, 0.0, -0.35), (0.0, 0.0, 0.35), 0.22),
        "union2": lambda: UnionShape([
            Sphere(0.35, (0.3, 0.0, 0.0)),
            Box((0.2, 0.3, 0.2), (-0.25, 0.0, 0.0))]),
        "asym1": lambda: UnionShape([
            Sphere(0.3, (0.25, 0.1, 0.0)),
            Box((0.3, 0.18, 0.12), (-0.25, -0.1, 0.05))]),
        "asym2": lambda: UnionShape([
            Capsule((-0.4, -0.2, -0.25), (0.35, 0.15, 0.2), 0.18),
            Sphere(0.22, (0.15, -0.3, 0.15))]),
        "asym3": lambda: UnionShape([
            Box((0.35, 0.12, 0.1), (0.1, 0.2, -0.1)),
            Capsule((0.0, -0.1, 0.3), (-0.3, 0.2, -0.2), 0.15)]),
    }
    if name not in presets:
        raise ValueError(f"unknown shape '{name}' (known: {sorted(presets)})")
    return presets[name]()


FAMILIES = ("sphere", "box", "torus", "capsule", "union2")


def family_shape(family: str, index: int, seed: int = 0) -> AnalyticShape:
    """Randomized member ``index`` of a shape family (deterministic in seed)."""
    rng = make_rng(seed, "family", family, index)
    if family == "sphere":
        return Sphere(rng.uniform(0.3, 0.6))
    if family == "box":
        he = rng.uniform(0.15, 0.48, size=3)
        return Box(he)
    if family == "torus":
        major = rng.uniform(0.3, 0.55)
        minor = rng.uniform(0.08, min(0.25, 0.55 * major))
        return Torus(major, minor)
    if family == "capsule":
        half = rng.uniform(0.15, 0.45)
        radius = rng.uniform(0.1, min(0.3, 0.8 - half))
        return Capsule((0.0, 0.0, -half), (0.0, 0.0, half), radius)
    if family == "union2":
        r1 = rng.uniform(0.2, 0.38)
        r2 = rng.uniform(0.2, 0.38)
        d = rng.uniform(0.15, min(0.35, 0.84 - max(r1, r2)))
        return UnionShape([Sphere(r1, (d, 0.0, 0.0)), Sphere(r2, (-d, 0.0, 0.0))])
    raise ValueError(f"unknown family '{family}' (known: {FAMILIES})")


# ---------------------------------------------------------------------------
# training samples


@dataclass
class SurfaceSamples:
    """On-surface points with unit normals plus off-surface domain points."""

    points: np.ndarray
    normals: np.ndarray
    off_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        self.points = as_points(self.points, "points")
        self.normals = as_points(self.normals, "normals")
        self.off_points = as_points(self.off_points, "off_points")
        if len(self.points) != len(self.normals):
            raise ValueError("points and normals must align")


def sample_shape(shape: AnalyticShape, n_on: int, n_off: int,
                 rng: np.random.Generator) -> SurfaceSamples:
    """Draw surface samples plus uniform off-surface points in [-1, 1]^3."""
    pts, nrm = shape.surface_points(n_on, rng)
    off = rng.uniform(-1.0, 1.0, size=(n_off, 3))
    return SurfaceSamples(pts, nrm, off)


def sample_surface(shape: AnalyticShape, n: int, seed: int = 0) -> SurfaceSamples:
    """Seed-deterministic surface sampling with as many off- as on-points."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return sample_shape(shape, n, n, make_rng(seed, "surface", shape.name))


def transform_surface_samples(samples: SurfaceSamples, pose: PoseSE3,
                              off_rng: np.random.Generator | None = None) -> SurfaceSamples:
    """Apply a pose to the on-surface data.

    Off-surface points are redrawn uniformly when ``off_rng`` is given
    (rotating box-uniform points would leave the [-1, 1]^3 domain); otherwise
    the original off-surface points are kept unchanged.
    """
    off = samples.off_points
    if off_rng is not None:
        off = off_rng.uniform(-1.0, 1.0, size=off.shape)
    return SurfaceSamples(pose.apply(samples.points),
                          pose.apply_normals(samples.normals), off)


# ---------------------------------------------------------------------------
# partial views and corruption


def hidden_point_removal(points: np.ndarray, viewpoint,
                         flip_radius: float | None = None) -> np.ndarray:
    """Indices of points visible from ``viewpoint`` (spherical flip + hull).

    Each point is reflected along its ray from the viewpoint to
    ``p' = p + 2 (r_f - |p - v|) (p - v) / |p - v|``; points whose images are
    vertices of the convex hull of the flipped set (viewpoint included) are
    visible. ``flip_radius`` defaults to 100x the largest viewpoint distance.
    Affinely degenerate inputs (fewer than 4 points, or all points coplanar)
    are treated as fully visible.
    """
    points = as_points(points)
    viewpoint = as_vector3(viewpoint, "viewpoint")
    n = len(points)
    if n == 0:
        return np.array([], dtype=np.int64)
    rel = points - viewpoint
    dist = np.linalg.norm(rel, axis=1)
    if np.any(dist < 1e-12):
        raise ValueError("a point coincides with the viewpoint")
    if flip_radius is None:
        flip_radius = 100.0 * float(dist.max())
    elif flip_radius <= dist.max():
        raise ValueError("flip_radius must exceed the largest viewpoint distance")
    flipped = rel + 2.0 * (flip_radius - dist)[:, None] * rel / dist[:, None]
    cloud = np.vstack([flipped, np.zeros(3)])
    centered = cloud - cloud.mean(axis=0)
    if n < 4 or np.linalg.matrix_rank(centered, tol=1e-9 * max(1.0, flip_radius)) < 3:
        return np.arange(n, dtype=np.int64)
    try:
        hull = ConvexHull(cloud)
    except QhullError:
        return np.arange(n, dtype=np.int64)
    visible = np.array(sorted(v for v in hull.vertices if v < n), dtype=np.int64)
    return visible


def corrupt(points: np.ndarray, sigma: float, outlier_ratio: float,
            rng: np.random.Generator) -> np.ndarray:
    """Gaussian per-coordinate noise, then exact-count outlier replacement.

    ``round(outlier_ratio * n)`` points are replaced by uniform draws from
    [-1, 1]^3; the rest keep their noisy coordinates.
    """
    points = as_points(points)
    if not 0.0 <= outlier_ratio <= 1.0:
        raise ValueError("outlier_ratio must lie in [0, 1]")
    out = points.copy()
    if sigma > 0.0:
        out += rng.normal(0.0, sigma, size=out.shape)
    k = int(round(outlier_ratio * len(points)))
    if k > 0:
        idx = rng.choice(len(points), size=k, replace=False)
        out[idx] = rng.uniform(-1.0, 1.0, size=(k, 3))
    return out


def sample_viewpoint(rng: np.random.Generator, distance: float = 3.0) -> np.ndarray:
    """Random viewpoint at a fixed distance from the origin."""
    return distance * _unit_rows(rng.normal(size=(1, 3)))[0]
