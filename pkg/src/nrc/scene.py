"""Scene description: materials, spheres, quads, triangle meshes, camera.

The Python objects here are the editable form. :meth:`Scene.pack` flattens
them into the plain arrays the compiled tracer consumes.
"""

from __future__ import annotations

from collections import namedtuple
from dataclasses import dataclass, field, replace

import numpy as np

ENERGY_TOLERANCE = 1e-6


class SceneError(ValueError):
    pass


@dataclass
class Material:
    name: str
    diffuse: tuple = (0.5, 0.5, 0.5)
    specular: tuple = (0.0, 0.0, 0.0)
    roughness: float = 1.0
    emission: tuple = (0.0, 0.0, 0.0)

    def validate(self):
        d = np.asarray(self.diffuse, float)
        s = np.asarray(self.specular, float)
        e = np.asarray(self.emission, float)
        if d.shape != (3,) or s.shape != (3,) or e.shape != (3,):
            raise SceneError(f"material {self.name!r}: colours need three components")
        if np.any(d < 0) or np.any(s < 0) or np.any(e < 0):
            raise SceneError(f"material {self.name!r}: negative reflectance or emission")
        if np.any(d + s > 1.0 + ENERGY_TOLERANCE):
            raise SceneError(
                f"material {self.name!r}: diffuse + specular exceeds 1 "
                f"(energy conservation), got {tuple(d + s)}"
            )
        if not np.isfinite(self.roughness) or self.roughness < 0:
            raise SceneError(f"material {self.name!r}: roughness must be finite and >= 0")


@dataclass
class Sphere:
    name: str
    center: tuple
    radius: float
    material: str
    inside: bool = False  # front face (normal, emission) points inwards
    emission_scale: float = 1.0


@dataclass
class Quad:
    """Parallelogram ``corner + s*edge_u + t*edge_v``; normal ``edge_u x edge_v``."""

    name: str
    corner: tuple
    edge_u: tuple
    edge_v: tuple
    material: str
    emission_scale: float = 1.0


@dataclass
class Mesh:
    name: str
    vertices: list
    triangles: list
    material: str
    emission_scale: float = 1.0


@dataclass
class Camera:
    position: tuple = (0.0, 0.0, 0.0)
    look_at: tuple = (0.0, 0.0, 1.0)
    up: tuple = (0.0, 1.0, 0.0)
    fov: float = 60.0  # vertical, degrees

    def basis(self):
        p = np.asarray(self.position, float)
        fwd = np.asarray(self.look_at, float) - p
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(self.up, float))
        right /= np.linalg.norm(right)
        up = np.cross(right, fwd)
        return p, fwd, right, up


@dataclass
class Keyframe:
    time: float
    translate: tuple = (0.0, 0.0, 0.0)
    rotate_y: float = 0.0
    emission_scale: float = 1.0


@dataclass
class AnimationTrack:
    """Keyframed rigid motion (rotate about y, then translate) of one object."""

    name: str
    target: str
    keys: list = field(default_factory=list)

    def sample(self, time: float) -> Keyframe:
        keys = sorted(self.keys, key=lambda k: k.time)
        if not keys:
            return Keyframe(time)
        if time <= keys[0].time:
            return keys[0]
        if time >= keys[-1].time:
            return keys[-1]
        for k0, k1 in zip(keys, keys[1:]):
            if k0.time <= time <= k1.time:
                f = (time - k0.time) / (k1.time - k0.time)
                lerp = lambda a, b: tuple((1 - f) * np.asarray(a, float) + f * np.asarray(b, float))
                return Keyframe(
                    time,
                    translate=lerp(k0.translate, k1.translate),
                    rotate_y=(1 - f) * k0.rotate_y + f * k1.rotate_y,
                    emission_scale=(1 - f) * k0.emission_scale + f * k1.emission_scale,
                )
        return keys[-1]


# Flat arrays consumed by the tracer kernels.
SceneData = namedtuple(
    "SceneData",
    [
        "spheres",      # (ns, 4) centre xyz, radius
        "sph_flip",     # (ns,) 1.0 when the front face points inwards
        "sph_mat",      # (ns,) material index
        "sph_escale",   # (ns,) emission multiplier
        "sph_lpdf",     # (ns,) light selection probability / area (0: not a light)
        "tris",         # (nt, 12) v0, e1, e2, unit normal
        "tri_mat",
        "tri_escale",
        "tri_lpdf",
        "materials",    # (nm, 10) diffuse, specular, roughness, emission
        "light_kind",   # (nl,) 0 sphere, 1 triangle
        "light_index",  # (nl,)
        "light_cdf",    # (nl,) power-proportional selection CDF
        "light_pmf",    # (nl,)
        "eps",          # ray offset
    ],
)


def _rotate_y(p, degrees):
    a = np.radians(degrees)
    c, s = np.cos(a), np.sin(a)
    rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return np.asarray(p, float) @ rot.T


@dataclass
class Scene:
    materials: list = field(default_factory=list)
    objects: list = field(default_factory=list)
    camera: Camera = field(default_factory=Camera)
    animations: list = field(default_factory=list)

    def material(self, name: str) -> Material:
        for m in self.materials:
            if m.name == name:
                return m
        raise SceneError(f"unknown material {name!r}")

    def validate(self):
        names = [m.name for m in self.materials]
        if len(set(names)) != len(names):
            raise SceneError("duplicate material names")
        for m in self.materials:
            m.validate()
        objnames = [o.name for o in self.objects]
        if len(set(objnames)) != len(objnames):
            raise SceneError("duplicate object names")
        for o in self.objects:
            self.material(o.material)
            if isinstance(o, Sphere) and not o.radius > 0:
                raise SceneError(f"sphere {o.name!r}: radius must be positive")
        for a in self.animations:
            if a.target not in objnames:
                raise SceneError(f"animation {a.name!r} targets unknown object {a.target!r}")
        return self

    def triangles(self):
        """All triangles as ``(v0, v1, v2, object)`` tuples."""
        out = []
        for o in self.objects:
            if isinstance(o, Quad):
                c = np.asarray(o.corner, float)
                u = np.asarray(o.edge_u, float)
                v = np.asarray(o.edge_v, float)
                out.append((c, c + u, c + u + v, o))
                out.append((c, c + u + v, c + v, o))
            elif isinstance(o, Mesh):
                verts = np.asarray(o.vertices, float)
                for i, j, k in o.triangles:
                    out.append((verts[i], verts[j], verts[k], o))
        return out

    def bounds(self, pad: float = 1e-3):
        pts = []
        for o in self.objects:
            if isinstance(o, Sphere):
                c = np.asarray(o.center, float)
                pts += [c - o.radius, c + o.radius]
        for v0, v1, v2, _ in self.triangles():
            pts += [v0, v1, v2]
        if not pts:
            return np.zeros(3), np.ones(3)
        pts = np.array(pts)
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        extent = np.maximum(hi - lo, 1e-6)
        return lo - pad * extent.max(), hi + pad * extent.max()

    def at_time(self, time: float) -> "Scene":
        """Copy of the scene with every animation track applied at ``time``."""
        if not self.animations:
            return self
        tracks = {a.target: a.sample(time) for a in self.animations}
        objects = []
        for o in self.objects:
            key = tracks.get(o.name)
            if key is None:
                objects.append(o)
                continue
            t = np.asarray(key.translate, float)
            scale = o.emission_scale * key.emission_scale
            if isinstance(o, Sphere):
                new = replace(o, center=tuple(_rotate_y(o.center, key.rotate_y) + t))
            elif isinstance(o, Quad):
                new = replace(
                    o,
                    corner=tuple(_rotate_y(o.corner, key.rotate_y) + t),
                    edge_u=tuple(_rotate_y(o.edge_u, key.rotate_y)),
                    edge_v=tuple(_rotate_y(o.edge_v, key.rotate_y)),
                )
            else:
                new = replace(o, vertices=[tuple(v) for v in _rotate_y(o.vertices, key.rotate_y) + t])
            objects.append(replace(new, emission_scale=scale))
        return replace(self, objects=objects, animations=[])

    def scaled(self, s: float) -> "Scene":
        """Uniformly scaled copy (geometry and camera position)."""
        objects = []
        for o in self.objects:
            if isinstance(o, Sphere):
                objects.append(replace(o, center=tuple(s * np.asarray(o.center)), radius=s * o.radius))
            elif isinstance(o, Quad):
                objects.append(replace(o, corner=tuple(s * np.asarray(o.corner)),
                                       edge_u=tuple(s * np.asarray(o.edge_u)),
                                       edge_v=tuple(s * np.asarray(o.edge_v))))
            else:
                objects.append(replace(o, vertices=[tuple(s * np.asarray(v)) for v in o.vertices]))
        cam = replace(self.camera, position=tuple(s * np.asarray(self.camera.position)),
                      look_at=tuple(s * np.asarray(self.camera.look_at)))
        return replace(self, objects=objects, camera=cam)

    def pack(self) -> SceneData:
        self.validate()
        mat_index = {m.name: i for i, m in enumerate(self.materials)}
        mats = np.zeros((max(len(self.materials), 1), 10))
        for i, m in enumerate(self.materials):
            mats[i, 0:3] = m.diffuse
            mats[i, 3:6] = m.specular
            mats[i, 6] = m.roughness
            mats[i, 7:10] = m.emission

        spheres = [o for o in self.objects if isinstance(o, Sphere)]
        sph = np.zeros((len(spheres), 4))
        sph_flip = np.zeros(len(spheres))
        sph_mat = np.zeros(len(spheres), dtype=np.int64)
        sph_escale = np.ones(len(spheres))
        for i, o in enumerate(spheres):
            sph[i, :3] = o.center
            sph[i, 3] = o.radius
            sph_flip[i] = 1.0 if o.inside else 0.0
            sph_mat[i] = mat_index[o.material]
            sph_escale[i] = o.emission_scale

        tri_list = self.triangles()
        tris = np.zeros((len(tri_list), 12))
        tri_mat = np.zeros(len(tri_list), dtype=np.int64)
        tri_escale = np.ones(len(tri_list))
        for i, (v0, v1, v2, o) in enumerate(tri_list):
            e1, e2 = v1 - v0, v2 - v0
            n = np.cross(e1, e2)
            norm = np.linalg.norm(n)
            if norm == 0.0:
                raise SceneError(f"object {o.name!r} has a degenerate triangle")
            tris[i] = np.concatenate([v0, e1, e2, n / norm])
            tri_mat[i] = mat_index[o.material]
            tri_escale[i] = o.emission_scale

        lum = np.array([0.2126, 0.7152, 0.0722])
        kinds, idx, power, area = [], [], [], []
        for i in range(len(spheres)):
            e = mats[sph_mat[i], 7:10] @ lum * sph_escale[i]
            if e > 0:
                a = 4.0 * np.pi * sph[i, 3] ** 2
                kinds.append(0); idx.append(i); power.append(e * a); area.append(a)
        for i in range(len(tri_list)):
            e = mats[tri_mat[i], 7:10] @ lum * tri_escale[i]
            if e > 0:
                a = 0.5 * np.linalg.norm(np.cross(tris[i, 3:6], tris[i, 6:9]))
                kinds.append(1); idx.append(i); power.append(e * a); area.append(a)
        power = np.asarray(power, float)
        pmf = power / power.sum() if power.size else power
        sph_lpdf = np.zeros(len(spheres))
        tri_lpdf = np.zeros(len(tri_list))
        for k, i, p, a in zip(kinds, idx, pmf, area):
            (sph_lpdf if k == 0 else tri_lpdf)[i] = p / a

        lo, hi = self.bounds(pad=0.0)
        eps = 1e-4 * max(float(np.linalg.norm(hi - lo)), 1e-6)
        return SceneData(
            sph, sph_flip, sph_mat, sph_escale, sph_lpdf,
            tris, tri_mat, tri_escale, tri_lpdf, mats,
            np.asarray(kinds, dtype=np.int64), np.asarray(idx, dtype=np.int64),
            np.cumsum(pmf) if pmf.size else np.zeros(0), pmf, eps,
        )
