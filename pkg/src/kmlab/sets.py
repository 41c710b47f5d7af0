"""Closed convex sets described by their projector.

These descriptors serve as fixed-point sets of nonexpansive maps, zero sets
of monotone operators and targets for distance computations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError
from .points import as_point


@dataclass(frozen=True)
class SetDescriptor:
    project: Callable[[np.ndarray], np.ndarray]
    is_affine: bool
    name: str = "set"
    dim: int | None = None
    params: dict = field(default_factory=dict, compare=False)

    def distance(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        return float(np.linalg.norm(x - self.project(x)))

    def contains(self, x, tol: float = 1e-10) -> bool:
        return self.distance(x) <= tol


def whole_space(dim: int) -> SetDescriptor:
    return SetDescriptor(lambda x: np.array(x, dtype=np.float64), True, "whole-space", dim)


def singleton(point) -> SetDescriptor:
    p = as_point(point, name="point")
    p.flags.writeable = False
    return SetDescriptor(lambda x: p.copy(), True, "singleton", p.size, {"point": p.tolist()})


def box(lo, hi) -> SetDescriptor:
    lo = as_point(lo, name="lo")
    hi = as_point(hi, dim=lo.size, name="hi")
    if np.any(lo > hi):
        raise ConfigError("box: every lower bound must not exceed the upper bound")
    return SetDescriptor(
        lambda x: np.clip(x, lo, hi), False, "box", lo.size, {"lo": lo.tolist(), "hi": hi.tolist()}
    )


def ball(center, radius: float) -> SetDescriptor:
    c = as_point(center, name="center")
    r = float(radius)
    if not (r >= 0 and np.isfinite(r)):
        raise ConfigError("ball: radius must be finite and non-negative")

    def project(x):
        d = x - c
        n = np.linalg.norm(d)
        if n <= r:
            return np.array(x, dtype=np.float64)
        return c + d * (r / n)

    return SetDescriptor(project, False, "ball", c.size, {"center": c.tolist(), "radius": r})


def halfspace(normal, offset: float) -> SetDescriptor:
    """The set {x : <normal, x> <= offset}."""
    a = as_point(normal, name="normal")
    b = float(offset)
    aa = float(a @ a)
    if aa == 0.0:
        raise ConfigError("halfspace: normal vector must be nonzero")

    def project(x):
        excess = float(a @ x) - b
        if excess <= 0:
            return np.array(x, dtype=np.float64)
        return x - (excess / aa) * a

    return SetDescriptor(project, False, "halfspace", a.size, {"normal": a.tolist(), "offset": b})


def affine(matrix, rhs) -> SetDescriptor:
    """The solution set {x : M x = r}; must be nonempty."""
    M = np.atleast_2d(np.array(matrix, dtype=np.float64))
    r = as_point(rhs, dim=M.shape[0], name="rhs")
    if not np.all(np.isfinite(M)):
        raise ConfigError("affine: matrix has non-finite entries")
    pinv = np.linalg.pinv(M)
    base = pinv @ r
    if np.linalg.norm(M @ base - r) > 1e-9 * max(1.0, np.linalg.norm(r)):
        raise ConfigError("affine: the system M x = r has no solution")
    # orthogonal projector onto ker M
    P = np.eye(M.shape[1]) - pinv @ M

    def project(x):
        return base + P @ (x - base)

    return SetDescriptor(project, True, "affine", M.shape[1], {"matrix": M.tolist(), "rhs": r.tolist()})


def line(point, direction) -> SetDescriptor:
    """The affine line through ``point`` spanned by ``direction``."""
    p = as_point(point, name="point")
    d = as_point(direction, dim=p.size, name="direction")
    n = np.linalg.norm(d)
    if n == 0:
        raise ConfigError("line: direction must be nonzero")
    u = d / n
    return SetDescriptor(
        lambda x: p + u * float(u @ (x - p)), True, "line", p.size, {"point": p.tolist(), "direction": d.tolist()}
    )


def set_from_spec(spec: dict) -> SetDescriptor:
    """Build a set from a record such as ``{"name": "box", "lo": [0], "hi": [1]}``."""
    if not isinstance(spec, dict) or "name" not in spec:
        raise ConfigError("set spec must be a mapping with a 'name' key")
    name = spec["name"]
    p = {k: v for k, v in spec.items() if k != "name"}
    builders = {
        "box": lambda: box(p["lo"], p["hi"]),
        "ball": lambda: ball(p["center"], p["radius"]),
        "halfspace": lambda: halfspace(p["normal"], p["offset"]),
        "affine": lambda: affine(p["matrix"], p["rhs"]),
        "line": lambda: line(p["point"], p["direction"]),
        "singleton": lambda: singleton(p["point"]),
        "whole-space": lambda: whole_space(int(p["dim"])),
    }
    if name not in builders:
        raise ConfigError(f"unknown set '{name}' (known: {', '.join(sorted(builders))})")
    try:
        return builders[name]()
    except KeyError as exc:
        raise ConfigError(f"set '{name}' is missing parameter {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"set '{name}': {exc}") from None
