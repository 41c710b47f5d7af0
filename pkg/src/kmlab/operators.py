"""Averaged nonexpansive maps, the relaxed KM step and its per-step inequalities."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import sets
from .certificates import Certificate
from .errors import ConfigError, ContractViolation, HypothesisViolation, InputError, PreconditionError
from .points import as_point
from .sets import SetDescriptor

FIXED_TOL = 1e-10
SLACK_TOL = 1e-10


@dataclass(frozen=True)
class AveragedMap:
    """A nonexpansive map T with declared averagedness constant alpha.

    T is alpha-averaged when T = (1 - alpha) Id + alpha R for a nonexpansive R.
    ``dim`` is None for maps that act on any dimension.
    """

    evaluate: Callable[[np.ndarray], np.ndarray]
    alpha: float
    name: str
    fixed_set: SetDescriptor | None = None
    dim: int | None = None

    def __post_init__(self):
        a = float(self.alpha)
        if not (0.0 < a <= 1.0):
            raise InputError(f"alpha must lie in (0, 1], got {self.alpha}")
        object.__setattr__(self, "alpha", a)

    def __call__(self, x) -> np.ndarray:
        return self.evaluate(x)


@dataclass(frozen=True)
class OperatorFamily:
    """A sequence (T_k) of averaged maps, optionally with a common fixed set."""

    at: Callable[[int], AveragedMap]
    description: str
    fixed_set: SetDescriptor | None = None
    dim: int | None = None

    def alpha_at(self, k: int) -> float:
        return self.at(k).alpha


def constant_family(T: AveragedMap) -> OperatorFamily:
    return OperatorFamily(lambda k: T, T.name, T.fixed_set, T.dim)


# ---- the relaxed step -----------------------------------------------------------

def relax(x: np.ndarray, Tx: np.ndarray, lam: float) -> np.ndarray:
    """(1 - lam) x + lam Tx, the single evaluation order used everywhere."""
    return (1.0 - lam) * x + lam * Tx


def perturb(y: np.ndarray, eta: float, e: np.ndarray) -> np.ndarray:
    return y if eta == 0.0 else y + eta * e


def _check_nonneg(value: float, name: str) -> float:
    v = float(value)
    if not (math.isfinite(v) and v >= 0):
        raise InputError(f"{name} must be a finite non-negative number, got {value}")
    return v


def _map_dim(T: AveragedMap, x: np.ndarray) -> None:
    if T.dim is not None and x.size != T.dim:
        raise ContractViolation(f"point has dimension {x.size} but {T.name} acts on R^{T.dim}")


def km_step(x, T: AveragedMap, lam: float, eta: float = 0.0, e=None) -> tuple[np.ndarray, np.ndarray]:
    """One inexact relaxed step.

    Returns ``(y, z)`` with ``y = (1 - lam) x + lam T(x)`` and ``z = y + eta e``.
    """
    x = as_point(x)
    _map_dim(T, x)
    e = np.zeros_like(x) if e is None else as_point(e, name="e")
    if e.size != x.size:
        raise ContractViolation(f"error vector has dimension {e.size}, point has {x.size}")
    lam = _check_nonneg(lam, "lambda")
    eta = _check_nonneg(eta, "eta")
    y = relax(x, T(x), lam)
    return y, perturb(y, eta, e)


def relax_constant(alpha: float, lam: float) -> float:
    """Averagedness constant lam*alpha of (1 - lam) Id + lam T."""
    alpha, lam = float(alpha), float(lam)
    if not (0.0 < alpha <= 1.0):
        raise HypothesisViolation(f"alpha must lie in (0, 1], got {alpha}")
    if not (0.0 < lam and lam * alpha <= 1.0 + 1e-15):
        raise HypothesisViolation(f"lambda must lie in (0, 1/alpha] = (0, {1 / alpha}], got {lam}")
    return min(lam * alpha, 1.0)


def relaxed_map(T: AveragedMap, lam: float) -> AveragedMap:
    """The map (1 - lam) Id + lam T, which is (lam*alpha)-averaged."""
    a = relax_constant(T.alpha, lam)
    lam = float(lam)
    return AveragedMap(lambda x: relax(x, T(x), lam), a, f"relaxed({T.name},{lam:g})", T.fixed_set, T.dim)


def extract_companion(T: AveragedMap) -> AveragedMap:
    """The nonexpansive R with T = (1 - alpha) Id + alpha R."""
    inv = 1.0 / T.alpha
    return AveragedMap(lambda x: x + inv * (T(x) - x), 1.0, f"companion({T.name})", T.fixed_set, T.dim)


def check_relaxed_inequalities(x, T: AveragedMap, lam: float, eta: float, e, xbar) -> Certificate:
    """Evaluate the one-step descent inequalities of the relaxed inexact step.

    Checked slacks (rhs - lhs):

    * ``y-descent``:  ||y-xb||^2 <= ||x-xb||^2 - lam(1/alpha - lam)||x-Tx||^2
    * ``z-descent``:  same with ||z-xb||^2 and the extra term eta||e||(2||y-xb|| + eta||e||)
    * ``monotone-distances`` (only for lam <= 1/alpha): ||y-xb|| <= ||x-xb||,
      ||z-xb|| <= ||y-xb|| + eta||e||, and ||Ty-y|| <= ||Tx-x||
    """
    x = as_point(x)
    xbar = as_point(xbar, dim=x.size, name="xbar")
    y, z = km_step(x, T, lam, eta, e)
    lam, eta = float(lam), float(eta)
    e = np.zeros_like(x) if e is None else as_point(e, name="e")
    if np.linalg.norm(T(xbar) - xbar) > FIXED_TOL:
        raise PreconditionError("xbar is not a fixed point of T (residual above 1e-10)")

    a = T.alpha
    Tx = T(x)
    r2 = float((x - Tx) @ (x - Tx))
    dx2 = float((x - xbar) @ (x - xbar))
    dy = float(np.linalg.norm(y - xbar))
    dz = float(np.linalg.norm(z - xbar))
    ee = eta * float(np.linalg.norm(e))
    base = dx2 - lam * (1.0 / a - lam) * r2

    slacks = {
        "y-descent": base - dy * dy,
        "z-descent": base + ee * (2 * dy + ee) - dz * dz,
    }
    not_applicable = {}
    if lam * a <= 1.0 + 1e-15:
        slacks["y-distance"] = math.sqrt(dx2) - dy
        slacks["z-distance"] = dy + ee - dz
        slacks["residual-decrease"] = float(np.linalg.norm(Tx - x) - np.linalg.norm(T(y) - y))
    else:
        not_applicable["monotone-distances"] = "lambda in [0, 1/alpha]"

    return Certificate.from_slacks(
        "relaxed-step",
        list(slacks.values()),
        SLACK_TOL,
        "||y-xb||^2 <= ||x-xb||^2 - lam(1/alpha-lam)||x-Tx||^2 (+ eta||e||(2||y-xb||+eta||e||) for z)",
        details={"slacks": slacks, "labels": list(slacks), "not_applicable": not_applicable},
    )


# ---- catalog ------------------------------------------------------------------

def _scalar_map(r: float, dim: int, default_alpha: float, name: str, params: dict) -> AveragedMap:
    if not (-1.0 <= r <= 1.0):
        raise ConfigError(f"{name}: need |r| <= 1, got {r}")
    alpha = float(params.get("alpha", default_alpha))
    # r Id is alpha-averaged exactly when alpha >= (1 - r)/2
    if not (0.0 < alpha <= 1.0) or alpha < (1.0 - r) / 2 - 1e-15:
        raise ConfigError(f"{name}: r={r} is not {alpha}-averaged")
    fixed = sets.whole_space(dim) if r == 1.0 else sets.singleton(np.zeros(dim))
    if r == 1.0:
        fn = lambda x: np.array(x, dtype=np.float64)
    elif r == 0.0:
        fn = lambda x: np.zeros_like(x, dtype=np.float64)
    else:
        fn = lambda x: r * x
    return AveragedMap(fn, alpha, name, fixed, dim)


def catalog_nonexpansive(spec: dict) -> AveragedMap:
    """Build a named nonexpansive map from a structured record.

    Known names: ``identity``, ``zero``, ``contraction`` (``r``), ``rotation``
    (``theta``, planar), ``projection`` (``set``: box/ball/halfspace/affine/line)
    and ``combination`` (``t``, ``of``) for (1 - t) Id + t S.
    """
    if not isinstance(spec, dict) or "name" not in spec:
        raise ConfigError("operator spec must be a mapping with a 'name' key")
    name = spec["name"]
    try:
        if name == "identity":
            return _scalar_map(1.0, int(spec.get("dim", 1)), 1.0, "identity", spec)
        if name == "zero":
            return _scalar_map(0.0, int(spec.get("dim", 1)), 0.5, "zero", spec)
        if name == "contraction":
            return _scalar_map(float(spec["r"]), int(spec.get("dim", 1)), 1.0, f"contraction({spec['r']})", spec)
        if name == "rotation":
            theta = float(spec["theta"])
            c, s = math.cos(theta), math.sin(theta)
            M = np.array([[c, -s], [s, c]])
            full_turn = math.isclose(math.remainder(theta, 2 * math.pi), 0.0, abs_tol=1e-15)
            fixed = sets.whole_space(2) if full_turn else sets.singleton(np.zeros(2))
            return AveragedMap(lambda x: M @ x, 1.0, f"rotation({theta:g})", fixed, 2)
        if name == "projection":
            C = sets.set_from_spec(spec["set"])
            return AveragedMap(C.project, 0.5, f"projection({C.name})", C, C.dim)
        if name == "combination":
            S = catalog_nonexpansive(spec["of"])
            t = float(spec["t"])
            try:
                return relaxed_map(S, t)
            except HypothesisViolation as exc:
                raise ConfigError(f"combination: {exc}") from None
    except KeyError as exc:
        raise ConfigError(f"operator '{name}' is missing parameter {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"operator '{name}': {exc}") from None
    raise ConfigError(
        f"unknown operator '{name}' (known: combination, contraction, identity, projection, rotation, zero)"
    )
