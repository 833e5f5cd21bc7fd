"""Planar polyline curves and Gauss-Legendre quadrature for normal-flux line integrals."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Callable, Literal

import numpy as np

from .errors import DegenerateCurve, InputError, NonFiniteField

Orientation = Literal["left", "right"]


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre rule applied independently on every polyline segment."""

    nodes_per_segment: int = 16

    def __post_init__(self):
        if self.nodes_per_segment < 1:
            raise ValueError("nodes_per_segment must be positive")

    def reference(self) -> tuple[np.ndarray, np.ndarray]:
        """Abscissae and weights on [0, 1]."""
        return _gauss_legendre01(self.nodes_per_segment)

    def refined(self, factor: int = 2) -> "QuadratureRule":
        return QuadratureRule(self.nodes_per_segment * factor)


@lru_cache(maxsize=64)
def _gauss_legendre01(k: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(k)
    x, w = (x + 1.0) / 2.0, w / 2.0
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@dataclass(frozen=True)
class CurveNodes:
    """Flattened quadrature data for a curve: ``points`` and ``normals`` are ``(K, 2)``."""

    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    length: float

    def __iter__(self):
        return iter(zip(self.points, self.normals, self.weights))

    def __len__(self) -> int:
        return self.weights.size


class Curve:
    """Polyline boundary with a fixed normal side.

    The normal on each segment is the travel direction rotated by -90 degrees
    (``orientation="right"``) or +90 degrees (``"left"``).
    """

    def __init__(self, vertices, orientation: Orientation = "right", name: str = "curve"):
        v = np.array(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 2:
            raise InputError("a curve needs at least two 2-D vertices")
        if not np.all(np.isfinite(v)):
            raise InputError("curve vertices must be finite")
        if orientation not in ("left", "right"):
            raise InputError(f"orientation must be 'left' or 'right', got {orientation!r}")
        seg = np.diff(v, axis=0)
        lengths = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(lengths == 0):
            raise DegenerateCurve(f"curve {name!r} has repeated consecutive vertices")
        v.setflags(write=False)
        self.vertices = v
        self.orientation: Orientation = orientation
        self.name = name
        self._nodes: dict[int, CurveNodes] = {}

    @classmethod
    def segment(cls, start, end, orientation: Orientation = "right", name: str = "segment") -> "Curve":
        return cls([start, end], orientation=orientation, name=name)

    def __repr__(self) -> str:
        return f"Curve({self.name!r}, {len(self.vertices)} vertices, {self.orientation})"

    @cached_property
    def segment_lengths(self) -> np.ndarray:
        seg = np.diff(self.vertices, axis=0)
        return np.hypot(seg[:, 0], seg[:, 1])

    @cached_property
    def segment_normals(self) -> np.ndarray:
        tangent = np.diff(self.vertices, axis=0) / self.segment_lengths[:, None]
        normals = np.column_stack([tangent[:, 1], -tangent[:, 0]])
        return normals if self.orientation == "right" else -normals

    def flipped(self) -> "Curve":
        other = "left" if self.orientation == "right" else "right"
        return Curve(self.vertices, orientation=other, name=self.name)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "orientation": self.orientation,
            "vertices": self.vertices.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Curve":
        try:
            return cls(d["vertices"], orientation=d.get("orientation", "right"), name=str(d.get("name", "curve")))
        except KeyError as exc:
            raise InputError(f"curve definition is missing {exc}") from None


def arc_length(c: Curve) -> float:
    total = float(c.segment_lengths.sum())
    if not total > 0:
        raise DegenerateCurve(f"curve {c.name!r} has zero length")
    return total


def quadrature_nodes(c: Curve, rule: QuadratureRule | None = None) -> CurveNodes:
    """Nodes, unit normals and weights of the composite rule; weights sum to the arc length."""
    rule = rule or QuadratureRule()
    cached = c._nodes.get(rule.nodes_per_segment)
    if cached is not None:
        return cached
    x, w = rule.reference()
    starts = c.vertices[:-1]
    seg = np.diff(c.vertices, axis=0)
    points = (starts[:, None, :] + x[None, :, None] * seg[:, None, :]).reshape(-1, 2)
    weights = (c.segment_lengths[:, None] * w[None, :]).reshape(-1)
    normals = np.repeat(c.segment_normals, x.size, axis=0)
    for arr in (points, weights, normals):
        arr.setflags(write=False)
    nodes = CurveNodes(points, normals, weights, arc_length(c))
    c._nodes[rule.nodes_per_segment] = nodes
    return nodes


def average_flux(c: Curve, rule: QuadratureRule | None, field: Callable[[np.ndarray], np.ndarray]):
    """Normalised flux ``(1/|C|) int_C n(s)^T field(s) dl(s)``.

    ``field`` receives the ``(K, 2)`` node array and returns either ``(K, 2)``
    (one field, scalar result) or ``(..., K, 2)`` for a batch of fields, in
    which case an array of shape ``(...)`` is returned.
    """
    nodes = quadrature_nodes(c, rule)
    values = np.asarray(field(nodes.points), dtype=float)
    if values.shape[-2:] != nodes.points.shape:
        raise ValueError(f"field returned shape {values.shape}, expected (..., {len(nodes)}, 2)")
    if not np.all(np.isfinite(values)):
        raise NonFiniteField(f"vector field is not finite on curve {c.name!r}")
    flux = np.einsum("...kd,kd,k->...", values, nodes.normals, nodes.weights) / nodes.length
    return float(flux) if flux.ndim == 0 else flux
