"""Maximally monotone operators handled through closed-form resolvents."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import sets
from .certificates import Certificate
from .errors import CapabilityError, ConfigError, HypothesisViolation, InputError, PreconditionError
from .operators import AveragedMap, OperatorFamily
from .points import as_point
from .sets import SetDescriptor

ZERO_TOL = 1e-10
RESCALE_TOL = 1e-9
GRAPH_TOL = 1e-8


@dataclass(frozen=True)
class MaxMonotoneMap:
    """A maximally monotone operator A on R^dim.

    ``resolvent(gamma, x)`` evaluates J_{gamma A} x.  ``graph_contains(x, u, tol)``
    tests u in A(x); ``residual_norm(x)`` returns d(0, A x) (inf off the domain).
    """

    resolvent: Callable[[float, np.ndarray], np.ndarray]
    dim: int
    name: str
    graph_contains: Callable[[np.ndarray, np.ndarray, float], bool] | None = None
    zero_set: SetDescriptor | None = None
    residual_norm: Callable[[np.ndarray], float] | None = None


@dataclass(frozen=True)
class SubregularityWitness:
    """Constants (kappa, delta) of an error bound d(x, S) <= kappa * residual(x) on B[anchor; delta].

    ``empirical`` marks a sampled estimate; consumers then use the inflated
    ``effective_kappa``.  A zero kappa is allowed for degenerate estimates
    where every sampled point already lies in the set.
    """

    anchor: np.ndarray
    kappa: float
    delta: float
    empirical: bool = False

    INFLATION = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "anchor", as_point(self.anchor, name="anchor"))
        k, d = float(self.kappa), float(self.delta)
        if not (math.isfinite(k) and k >= 0):
            raise InputError(f"kappa must be finite and non-negative, got {self.kappa}")
        if not (math.isfinite(d) and d > 0):
            raise InputError(f"delta must be finite and positive, got {self.delta}")
        object.__setattr__(self, "kappa", k)
        object.__setattr__(self, "delta", d)

    @property
    def effective_kappa(self) -> float:
        return self.kappa * (1.0 + self.INFLATION) if self.empirical else self.kappa


def _gamma(gamma: float) -> float:
    g = float(gamma)
    if not (math.isfinite(g) and g > 0):
        raise HypothesisViolation(f"resolvent parameter must be positive and finite, got {gamma}")
    return g


def resolvent(A: MaxMonotoneMap, gamma: float, x) -> np.ndarray:
    """J_{gamma A}(x) = (Id + gamma A)^{-1} x."""
    g = _gamma(gamma)
    return A.resolvent(g, as_point(x, dim=A.dim))


def reflected_resolvent(A: MaxMonotoneMap, c: float, x) -> np.ndarray:
    """2 J_{cA} x - x."""
    x = as_point(x, dim=A.dim)
    return 2.0 * resolvent(A, c, x) - x


def graph_element(A: MaxMonotoneMap, gamma: float, x) -> tuple[np.ndarray, np.ndarray]:
    """The pair (J x, (x - J x)/gamma), which lies in the graph of A."""
    x = as_point(x, dim=A.dim)
    p = resolvent(A, gamma, x)
    return p, (x - p) / float(gamma)


def resolvent_rescale(A: MaxMonotoneMap, gamma: float, mu: float, x) -> Certificate:
    """Check J_gamma(x) = J_mu((mu/gamma) x + (1 - mu/gamma) J_gamma(x))."""
    g, m = _gamma(gamma), _gamma(mu)
    x = as_point(x, dim=A.dim)
    lhs = A.resolvent(g, x)
    t = m / g
    rhs = A.resolvent(m, t * x + (1.0 - t) * lhs)
    gap = float(np.linalg.norm(lhs - rhs))
    return Certificate.from_slacks(
        "resolvent-rescale",
        [-gap],
        RESCALE_TOL,
        "J_g(x) = J_m((m/g)x + (1-m/g)J_g(x))",
        details={"lhs": lhs.tolist(), "rhs": rhs.tolist(), "discrepancy": gap},
    )


def check_resolvent_firm(A: MaxMonotoneMap, gamma: float, x, z) -> Certificate:
    """Slack of ||Jx - z||^2 + ||x - Jx||^2 <= ||x - z||^2 for a zero z of A."""
    if A.zero_set is None:
        raise CapabilityError(f"{A.name} exposes no zero set")
    x = as_point(x, dim=A.dim)
    z = as_point(z, dim=A.dim, name="z")
    if not A.zero_set.contains(z, ZERO_TOL):
        raise PreconditionError("z is not a zero of A (distance above 1e-10)")
    J = resolvent(A, gamma, x)
    slack = float((x - z) @ (x - z) - (J - z) @ (J - z) - (x - J) @ (x - J))
    return Certificate.from_slacks(
        "resolvent-firm", [slack], 1e-10, "||Jx - z||^2 + ||x - Jx||^2 <= ||x - z||^2 for z in zer A"
    )


def resolvent_family(A: MaxMonotoneMap, c_at: Callable[[int], float]) -> OperatorFamily:
    """The family T_k = J_{c_k A}; each member is firmly nonexpansive (alpha = 1/2)."""

    def at(k: int) -> AveragedMap:
        c = _gamma(c_at(k))
        return AveragedMap(lambda x: A.resolvent(c, x), 0.5, f"J[{c:g}*{A.name}]", A.zero_set, A.dim)

    return OperatorFamily(at, f"resolvents({A.name})", A.zero_set, A.dim)


# ---- catalog ------------------------------------------------------------------

def _soft(x: np.ndarray, t: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def _identity_plus_l1(r: float, w: float, dim: int, name: str) -> MaxMonotoneMap:
    """A = r Id + w * subdifferential of ||.||_1 (either part may vanish)."""
    if not (r >= 0 and w >= 0 and math.isfinite(r) and math.isfinite(w)):
        raise ConfigError(f"{name}: coefficients must be finite and non-negative")

    if w == 0.0:
        def J(g, x):
            return x / (1.0 + g * r)
    else:
        def J(g, x):
            return _soft(x, g * w) / (1.0 + g * r)

    def contains(x, u, tol):
        v = u - r * x
        nz = x != 0
        on = np.abs(v[nz] - w * np.sign(x[nz])) <= tol
        off = np.abs(v[~nz]) <= w + tol
        return bool(np.all(on) and np.all(off))

    def residual(x):
        v = np.where(x != 0, r * x + w * np.sign(x), 0.0)
        return float(np.linalg.norm(v))

    zero = sets.whole_space(dim) if (r == 0 and w == 0) else sets.singleton(np.zeros(dim))
    return MaxMonotoneMap(J, dim, name, contains, zero, residual)


def _quadratic(Q, b) -> MaxMonotoneMap:
    Q = np.atleast_2d(np.array(Q, dtype=np.float64))
    n = Q.shape[0]
    b = as_point(b, dim=n, name="b")
    scale = max(1.0, float(np.max(np.abs(Q))))
    if Q.shape != (n, n) or not np.all(np.isfinite(Q)):
        raise ConfigError("quadratic: Q must be a finite square matrix")
    if np.max(np.abs(Q - Q.T)) > 1e-12 * scale:
        raise ConfigError("quadratic: Q must be symmetric")
    if np.linalg.eigvalsh(Q).min() < -1e-12 * scale:
        raise ConfigError("quadratic: Q must be positive semidefinite")
    eye = np.eye(n)

    def J(g, x):
        return np.linalg.solve(eye + g * Q, x - g * b)

    try:
        zero = sets.affine(Q, -b)
    except ConfigError:
        zero = None  # Q x + b = 0 has no solution
    residual = lambda x: float(np.linalg.norm(Q @ x + b))
    contains = lambda x, u, tol: bool(np.linalg.norm(u - (Q @ x + b)) <= tol)
    return MaxMonotoneMap(J, n, "quadratic", contains, zero, residual)


def _normal_cone(C: SetDescriptor) -> MaxMonotoneMap:
    def contains(x, u, tol):
        # u is normal to C at x iff x = P_C(x + u)
        return C.contains(x, tol) and bool(np.linalg.norm(C.project(x + u) - x) <= tol)

    residual = lambda x: 0.0 if C.contains(x, ZERO_TOL) else math.inf
    return MaxMonotoneMap(lambda g, x: C.project(x), C.dim, f"normal_cone({C.name})", contains, C, residual)


def _skew(s: float) -> MaxMonotoneMap:
    if not (math.isfinite(s) and s != 0):
        raise ConfigError("skew: scale must be finite and nonzero")
    S = s * np.array([[0.0, 1.0], [-1.0, 0.0]])

    def J(g, x):
        # (I + g S)^{-1} = (I - g S) / (1 + g^2 s^2) for the planar skew S
        t = g * s
        return np.array([x[0] - t * x[1], x[1] + t * x[0]]) / (1.0 + t * t)

    contains = lambda x, u, tol: bool(np.linalg.norm(u - S @ x) <= tol)
    return MaxMonotoneMap(J, 2, "skew", contains, sets.singleton(np.zeros(2)), lambda x: float(np.linalg.norm(S @ x)))


def _sum(terms) -> MaxMonotoneMap:
    if not terms:
        raise ConfigError("sum: needs at least one term")
    r = w = 0.0
    dims = set()
    for t in terms:
        if not isinstance(t, dict) or t.get("name") not in ("identity", "l1"):
            raise ConfigError("sum: only identity and l1 terms keep a closed-form resolvent")
        dims.add(int(t.get("dim", 1)))
        if t["name"] == "identity":
            r += float(t.get("r", 1.0))
        else:
            w += float(t.get("w", 1.0))
    if len(dims) != 1:
        raise ConfigError("sum: all terms must share one dimension")
    return _identity_plus_l1(r, w, dims.pop(), "sum")


def catalog_monotone(spec: dict) -> MaxMonotoneMap:
    """Build a named maximally monotone operator.

    Known names: ``identity`` (``r``, ``dim``), ``quadratic`` (``Q``, ``b``;
    A x = Q x + b with Q symmetric PSD), ``l1`` (``w``, ``dim``), ``normal_cone``
    (``set``), ``skew`` (``scale``) and ``sum`` (identity and l1 terms).
    """
    if not isinstance(spec, dict) or "name" not in spec:
        raise ConfigError("monotone spec must be a mapping with a 'name' key")
    name = spec["name"]
    try:
        if name == "identity":
            return _identity_plus_l1(float(spec.get("r", 1.0)), 0.0, int(spec.get("dim", 1)), "identity")
        if name == "l1":
            return _identity_plus_l1(0.0, float(spec.get("w", 1.0)), int(spec.get("dim", 1)), "l1")
        if name == "quadratic":
            return _quadratic(spec["Q"], spec["b"])
        if name == "normal_cone":
            return _normal_cone(sets.set_from_spec(spec["set"]))
        if name == "skew":
            return _skew(float(spec.get("scale", 1.0)))
        if name == "sum":
            return _sum(spec["terms"])
    except KeyError as exc:
        raise ConfigError(f"monotone map '{name}' is missing parameter {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"monotone map '{name}': {exc}") from None
    raise ConfigError(f"unknown monotone map '{name}' (known: identity, l1, normal_cone, quadratic, skew, sum)")
