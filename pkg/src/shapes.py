"""Procedural shape families built from analytic primitives.

Every family draws its parameters from a seeded generator and keeps the
shape inside the unit cube, so a dataset needs no external meshes.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from .fields import ShapeField, boolean_shape, primitive_shape
from .geometry import AnalyticPrimitive

logger = logging.getLogger(__name__)


@dataclass
class ShapeRecipe:
    """CSG recipe: the first primitive, then ``(op, primitive)`` steps applied in order."""

    family: str
    parts: List[Tuple[str, AnalyticPrimitive]] = field(default_factory=list)

    def field(self) -> ShapeField:
        (_, first), rest = self.parts[0], self.parts[1:]
        shape = primitive_shape(first)
        for op, prim in rest:
            shape = boolean_shape(shape, primitive_shape(prim), op)
        shape.name = self.family
        return shape

    def to_dict(self) -> Dict[str, Any]:
        return {
            "family": self.family,
            "parts": [{"op": op, "primitive": prim.to_dict()} for op, prim in self.parts],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ShapeRecipe":
        return cls(
            family=data["family"],
            parts=[(p["op"], AnalyticPrimitive.from_dict(p["primitive"])) for p in data["parts"]],
        )


def _sphere(rng: np.random.Generator) -> ShapeRecipe:
    radius = rng.uniform(0.3, 0.45)
    return ShapeRecipe("sphere", [("base", AnalyticPrimitive("sphere", {"radius": radius}))])


def _box(rng: np.random.Generator) -> ShapeRecipe:
    hx, hy, hz = rng.uniform(0.2, 0.45, size=3)
    return ShapeRecipe("box", [("base", AnalyticPrimitive("box", {"hx": hx, "hy": hy, "hz": hz}))])


def _superellipsoid(rng: np.random.Generator) -> ShapeRecipe:
    ax, ay, az = rng.uniform(0.25, 0.45, size=3)
    e1, e2 = rng.uniform(0.4, 1.4, size=2)
    params = {"ax": ax, "ay": ay, "az": az, "e1": e1, "e2": e2}
    return ShapeRecipe("superellipsoid", [("base", AnalyticPrimitive("superellipsoid", params))])


def _mug(rng: np.random.Generator) -> ShapeRecipe:
    radius = rng.uniform(0.2, 0.3)
    half_height = rng.uniform(0.25, 0.4)
    wall = rng.uniform(0.03, 0.05)
    major = rng.uniform(0.09, 0.12)
    minor = rng.uniform(0.025, 0.035)
    # Handle ring lies in the xz-plane, centred on the outer wall.
    handle_pose = Rotation.from_euler("x", 90.0, degrees=True).as_matrix()
    return ShapeRecipe("mug", [
        ("base", AnalyticPrimitive("cylinder", {"radius": radius, "half_height": half_height})),
        ("union", AnalyticPrimitive(
            "torus", {"major_radius": major, "minor_radius": minor},
            rotation=handle_pose, translation=np.array([radius, 0.0, 0.0]),
        )),
        ("subtract", AnalyticPrimitive(
            "cylinder", {"radius": radius - wall, "half_height": half_height},
            translation=np.array([0.0, 0.0, wall]),
        )),
    ])


def _bowl(rng: np.random.Generator) -> ShapeRecipe:
    radius = rng.uniform(0.35, 0.48)
    wall = rng.uniform(0.03, 0.06)
    rim = rng.uniform(0.0, 0.15) * radius
    flip = np.diag([1.0, -1.0, -1.0])
    return ShapeRecipe("bowl", [
        ("base", AnalyticPrimitive("sphere", {"radius": radius})),
        ("subtract", AnalyticPrimitive("sphere", {"radius": radius - wall})),
        ("subtract", AnalyticPrimitive("half-space", {}, rotation=flip,
                                       translation=np.array([0.0, 0.0, rim]))),
    ])


FAMILIES: Dict[str, Callable[[np.random.Generator], ShapeRecipe]] = {
    "sphere": _sphere,
    "box": _box,
    "superellipsoid": _superellipsoid,
    "mug": _mug,
    "bowl": _bowl,
}


def make_shape(family: str, rng: np.random.Generator) -> ShapeRecipe:
    """Draw one shape of ``family``."""
    try:
        return FAMILIES[family](rng)
    except KeyError:
        raise ValueError(
            f"Unknown shape family {family!r}. Known families: {sorted(FAMILIES)}"
        ) from None
