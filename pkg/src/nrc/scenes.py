"""Builtin test scenes."""

from __future__ import annotations

from .scene import Camera, Material, Quad, Scene, Sphere


def furnace(rho: float = 0.5, emission: float = 1.0, radius: float = 1.0,
            fov: float = 60.0) -> Scene:
    """Camera at the centre of a uniformly emissive, diffuse sphere shell.

    Every point sees the same radiance ``emission / (1 - rho)``.
    """
    shell = Material("shell", diffuse=(rho,) * 3, emission=(emission,) * 3)
    cam = Camera(position=(0.0, 0.0, 0.0), look_at=(0.0, 0.0, 1.0), up=(0.0, 1.0, 0.0), fov=fov)
    return Scene([shell], [Sphere("enclosure", (0.0, 0.0, 0.0), radius, "shell", inside=True)],
                 cam).validate()


def cornell_box(light: float = 12.0) -> Scene:
    """Unit box open towards the camera, with a square ceiling light and two spheres.

    All materials are diffuse.
    """
    mats = [
        Material("white", diffuse=(0.73, 0.73, 0.73)),
        Material("red", diffuse=(0.65, 0.05, 0.05)),
        Material("green", diffuse=(0.12, 0.45, 0.15)),
        Material("lamp", diffuse=(0.0, 0.0, 0.0), emission=(light, light, light)),
    ]
    objs = [
        Quad("floor", (0, 0, 0), (0, 0, 1), (1, 0, 0), "white"),
        Quad("ceiling", (0, 1, 0), (1, 0, 0), (0, 0, 1), "white"),
        Quad("back", (0, 0, 1), (0, 1, 0), (1, 0, 0), "white"),
        Quad("left", (0, 0, 0), (0, 1, 0), (0, 0, 1), "red"),
        Quad("right", (1, 0, 0), (0, 0, 1), (0, 1, 0), "green"),
        Quad("light", (0.35, 0.999, 0.35), (0.3, 0, 0), (0, 0, 0.3), "lamp"),
        Sphere("ball_a", (0.3, 0.2, 0.65), 0.2, "white"),
        Sphere("ball_b", (0.72, 0.15, 0.4), 0.15, "white"),
    ]
    cam = Camera(position=(0.5, 0.5, -1.35), look_at=(0.5, 0.5, 0.5), up=(0, 1, 0), fov=38.0)
    return Scene(mats, objs, cam).validate()


BUILTIN = {"furnace": furnace, "cornell": cornell_box}
