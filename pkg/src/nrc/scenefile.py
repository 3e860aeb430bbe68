"""Plain-text scene files.

A file is a sequence of blocks; ``#`` starts a comment::

    camera {
      position 0 0 0
      look_at 0 0 1
      up 0 1 0
      fov 60
    }
    material shell {
      diffuse 0.5 0.5 0.5
      emission 1 1 1
    }
    sphere enclosure {
      center 0 0 0
      radius 1
      material shell
      inside true
    }
    quad light {            # corner + s*edge_u + t*edge_v, normal edge_u x edge_v
      corner 0 1 0
      edge_u 1 0 0
      edge_v 0 0 1
      material lamp
    }
    mesh block {
      material white
      vertex 0 0 0          # repeated, indexed from 0
      triangle 0 1 2        # repeated
    }
    animation bob {
      target block
      key 0 translate 0 0 0 rotate_y 0 emission_scale 1
      key 30 translate 0 0.2 0
    }

Unknown blocks or fields raise :class:`SceneParseError` carrying the line
number. Animation times are in frames.
"""

from __future__ import annotations

import shlex

from .scene import (AnimationTrack, Camera, Keyframe, Material, Mesh, Quad, Scene, SceneError,
                    Sphere)


class SceneParseError(SceneError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}

# field name -> number of values (0 = single word)
_FIELDS = {
    "camera": {"position": 3, "look_at": 3, "up": 3, "fov": 1},
    "material": {"diffuse": 3, "specular": 3, "roughness": 1, "emission": 3},
    "sphere": {"center": 3, "radius": 1, "material": 0, "inside": 0, "emission_scale": 1},
    "quad": {"corner": 3, "edge_u": 3, "edge_v": 3, "material": 0, "emission_scale": 1},
    "mesh": {"material": 0, "emission_scale": 1},
    "animation": {"target": 0},
}
_REQUIRED = {
    "camera": (),
    "material": (),
    "sphere": ("center", "radius", "material"),
    "quad": ("corner", "edge_u", "edge_v", "material"),
    "mesh": ("material",),
    "animation": ("target",),
}
_KEY_FIELDS = {"translate": 3, "rotate_y": 1, "emission_scale": 1}


def _floats(lineno, name, words, count):
    if len(words) != count:
        raise SceneParseError(lineno, f"field {name!r} expects {count} number(s), got {len(words)}")
    try:
        vals = [float(w) for w in words]
    except ValueError:
        raise SceneParseError(lineno, f"field {name!r}: not a number in {' '.join(words)!r}") from None
    return vals[0] if count == 1 else tuple(vals)


def _parse_key(lineno, words):
    if not words:
        raise SceneParseError(lineno, "key needs a time")
    key = Keyframe(time=_floats(lineno, "key", words[:1], 1))
    i = 1
    while i < len(words):
        name = words[i]
        if name not in _KEY_FIELDS:
            raise SceneParseError(lineno, f"unknown keyframe field {name!r}")
        n = _KEY_FIELDS[name]
        setattr(key, name, _floats(lineno, name, words[i + 1:i + 1 + n], n))
        i += 1 + n
    return key


def _build(kind, name, lineno, vals, extra):
    missing = [f for f in _REQUIRED[kind] if f not in vals]
    if missing:
        raise SceneParseError(lineno, f"{kind} {name!r} is missing field(s) {', '.join(missing)}")
    if kind == "camera":
        return Camera(**vals)
    if kind == "material":
        return Material(name, **vals)
    if kind == "sphere":
        return Sphere(name, **vals)
    if kind == "quad":
        return Quad(name, **vals)
    if kind == "mesh":
        return Mesh(name, vertices=extra["vertex"], triangles=extra["triangle"], **vals)
    return AnimationTrack(name, vals["target"], keys=extra["key"])


def parse_scene(text: str) -> Scene:
    """Parse and validate scene text."""
    scene = Scene()
    block = None
    cameras = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        words = shlex.split(line)
        if block is None:
            if words[-1] != "{":
                raise SceneParseError(lineno, f"expected a block header ending in '{{', got {line!r}")
            kind = words[0]
            if kind not in _FIELDS:
                raise SceneParseError(lineno, f"unknown block type {kind!r}")
            if kind == "camera":
                if len(words) != 2:
                    raise SceneParseError(lineno, "camera blocks take no name")
                name = None
            elif len(words) != 3:
                raise SceneParseError(lineno, f"{kind} block needs exactly one name")
            else:
                name = words[1]
            block = (kind, name, lineno, {}, {"vertex": [], "triangle": [], "key": []})
            continue
        kind, name, start, vals, extra = block
        if words == ["}"]:
            obj = _build(kind, name, start, vals, extra)
            if kind == "camera":
                cameras += 1
                if cameras > 1:
                    raise SceneParseError(start, "more than one camera")
                scene.camera = obj
            elif kind == "material":
                scene.materials.append(obj)
            elif kind == "animation":
                scene.animations.append(obj)
            else:
                scene.objects.append(obj)
            block = None
            continue
        field, args = words[0], words[1:]
        if kind == "mesh" and field == "vertex":
            extra["vertex"].append(_floats(lineno, field, args, 3))
        elif kind == "mesh" and field == "triangle":
            tri = _floats(lineno, field, args, 3)
            if any(v != int(v) or v < 0 for v in tri):
                raise SceneParseError(lineno, "triangle indices must be non-negative integers")
            extra["triangle"].append(tuple(int(v) for v in tri))
        elif kind == "animation" and field == "key":
            extra["key"].append(_parse_key(lineno, args))
        elif field not in _FIELDS[kind]:
            raise SceneParseError(lineno, f"unknown field {field!r} in {kind} block")
        elif field in vals:
            raise SceneParseError(lineno, f"duplicate field {field!r}")
        elif _FIELDS[kind][field] == 0:
            if len(args) != 1:
                raise SceneParseError(lineno, f"field {field!r} expects one word")
            if field == "inside":
                if args[0].lower() not in _BOOL:
                    raise SceneParseError(lineno, f"field 'inside' expects true/false, got {args[0]!r}")
                vals[field] = _BOOL[args[0].lower()]
            else:
                vals[field] = args[0]
        else:
            vals[field] = _floats(lineno, field, args, _FIELDS[kind][field])
    if block is not None:
        raise SceneParseError(block[2], f"unterminated {block[0]} block")
    for o in scene.objects:
        if isinstance(o, Mesh):
            nv = len(o.vertices)
            if any(i >= nv for t in o.triangles for i in t):
                raise SceneError(f"mesh {o.name!r}: triangle index out of range")
    return scene.validate()


def load_scene(path) -> Scene:
    with open(path, encoding="utf-8") as fh:
        return parse_scene(fh.read())


def _fmt(v) -> str:
    if isinstance(v, (tuple, list)):
        return " ".join(_fmt(x) for x in v)
    return repr(float(v))


def serialize_scene(scene: Scene) -> str:
    """Text that :func:`parse_scene` turns back into an equal scene."""
    c = scene.camera
    out = ["camera {", f"  position {_fmt(c.position)}", f"  look_at {_fmt(c.look_at)}",
           f"  up {_fmt(c.up)}", f"  fov {_fmt(c.fov)}", "}"]
    for m in scene.materials:
        out += [f"material {m.name} {{", f"  diffuse {_fmt(m.diffuse)}",
                f"  specular {_fmt(m.specular)}", f"  roughness {_fmt(m.roughness)}",
                f"  emission {_fmt(m.emission)}", "}"]
    for o in scene.objects:
        if isinstance(o, Sphere):
            out += [f"sphere {o.name} {{", f"  center {_fmt(o.center)}", f"  radius {_fmt(o.radius)}",
                    f"  material {o.material}", f"  inside {'true' if o.inside else 'false'}"]
        elif isinstance(o, Quad):
            out += [f"quad {o.name} {{", f"  corner {_fmt(o.corner)}", f"  edge_u {_fmt(o.edge_u)}",
                    f"  edge_v {_fmt(o.edge_v)}", f"  material {o.material}"]
        else:
            out += [f"mesh {o.name} {{", f"  material {o.material}"]
            out += [f"  vertex {_fmt(v)}" for v in o.vertices]
            out += [f"  triangle {i} {j} {k}" for i, j, k in o.triangles]
        out += [f"  emission_scale {_fmt(o.emission_scale)}", "}"]
    for a in scene.animations:
        out += [f"animation {a.name} {{", f"  target {a.target}"]
        for k in a.keys:
            out.append(f"  key {_fmt(k.time)} translate {_fmt(k.translate)} "
                       f"rotate_y {_fmt(k.rotate_y)} emission_scale {_fmt(k.emission_scale)}")
        out.append("}")
    return "\n".join(out) + "\n"


def save_scene(path, scene: Scene) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_scene(scene))
