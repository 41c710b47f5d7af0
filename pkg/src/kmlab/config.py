"""YAML experiment configuration.

A document looks like::

    problem: {kind: monotone, name: l1, w: 1.0, dim: 1}
    schedule: {lambda: 1, c: 1}
    x0: [3.0]
    horizon: 50
    certificates: [quasi-fejer, scaled-residual]

``problem.kind`` is ``monotone`` (catalog of maximally monotone maps, run
with GPPA) or ``nonexpansive`` (catalog of averaged maps, run with KM).
Every validation problem is collected and reported together.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
import yaml

from .errors import ConfigError, ConfigParseError
from .monotone import MaxMonotoneMap, SubregularityWitness, catalog_monotone, resolvent_family
from .operators import OperatorFamily, catalog_nonexpansive, constant_family
from .schedules import Schedule, make_schedule, summability_probe
from .sets import SetDescriptor

CERTIFICATES = (
    "quasi-fejer",
    "distance-bound",
    "gppa-descent",
    "scaled-residual",
    "cluster-inclusion",
    "contraction",
    "stability",
    "linear-rate",
)
_TOP_KEYS = {"problem", "method", "schedule", "x0", "horizon", "probes", "certificates", "tolerances", "seed",
             "output", "reference", "witness", "stability"}
_X0_STREAM = 0x0A0
_NEEDS_FIXED = {"quasi-fejer", "distance-bound", "contraction", "linear-rate", "gppa-descent", "cluster-inclusion"}
_NEEDS_GPPA = {"gppa-descent", "scaled-residual", "cluster-inclusion"}


@dataclass
class ExperimentConfig:
    document: dict
    method: str
    family: OperatorFamily
    monotone: MaxMonotoneMap | None
    schedule: Schedule
    x0: np.ndarray
    horizon: int
    certificates: tuple[str, ...]
    seed: int | None
    probes: list[int] | None = None
    tolerances: dict[str, float] = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    reference: np.ndarray | None = None
    witness: dict | None = None
    stability: dict = field(default_factory=dict)
    exact_family: OperatorFamily | None = None

    @property
    def fixed_set(self) -> SetDescriptor | None:
        return self.family.fixed_set

    @property
    def alpha_at(self) -> Callable[[int], float]:
        return self.family.alpha_at

    @property
    def dim(self) -> int:
        return int(self.x0.size)

    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.document).encode()).hexdigest()


def canonical_json(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def load_document(text: str) -> dict:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        problem = getattr(exc, "problem", None) or str(exc)
        if mark is None:
            raise ConfigParseError(problem) from None
        raise ConfigParseError(problem, mark.line + 1, mark.column + 1) from None
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigParseError("top level must be a mapping", 1, 1)
    # an exported manifest carries the effective config and replays it
    if "config_sha256" in doc and isinstance(doc.get("config"), dict):
        doc = doc["config"]
    return doc


def _int(value, name, errors, minimum=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        errors.append(f"{name}: expected an integer, got {value!r}")
        return None
    value = int(value)
    if minimum is not None and value < minimum:
        errors.append(f"{name}: must be at least {minimum}, got {value}")
        return None
    return value


def _vector(value, name, errors, dim=None):
    try:
        v = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError):
        errors.append(f"{name}: expected a list of numbers")
        return None
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1 or v.size == 0 or not np.all(np.isfinite(v)):
        errors.append(f"{name}: expected a non-empty list of finite numbers")
        return None
    if dim is not None and v.size != dim:
        errors.append(f"{name}: has dimension {v.size}, the problem lives in R^{dim}")
        return None
    return v


def _uses_randomness(node) -> bool:
    if isinstance(node, dict):
        if node.get("kind") == "uniform" or node.get("direction") == "random" or "random" in node:
            return True
        return any(_uses_randomness(v) for v in node.values())
    if isinstance(node, list):
        return any(_uses_randomness(v) for v in node)
    return False


def _problem(spec, errors):
    if not isinstance(spec, dict):
        errors.append("problem: required mapping with 'kind' and 'name'")
        return None, None
    spec = dict(spec)
    kind = spec.pop("kind", None)
    try:
        if kind == "monotone":
            A = catalog_monotone(spec)
            return A, None
        if kind == "nonexpansive":
            return None, catalog_nonexpansive(spec)
    except ConfigError as exc:
        errors.extend(f"problem: {m}" for m in exc.errors)
        return None, None
    errors.append(f"problem.kind: expected 'monotone' or 'nonexpansive', got {kind!r}")
    return None, None


def parse_config(text: str, seed: int | None = None, horizon: int | None = None) -> ExperimentConfig:
    """Validate a YAML document into an :class:`ExperimentConfig`.

    ``seed`` and ``horizon`` override the document values.  Raises
    :class:`ConfigParseError` (with line information) for malformed YAML and
    :class:`ConfigError` listing every semantic problem otherwise.
    """
    doc = copy.deepcopy(load_document(text))
    if seed is not None:
        doc["seed"] = int(seed)
    if horizon is not None:
        doc["horizon"] = int(horizon)
    errors: list[str] = [f"unknown key '{k}'" for k in sorted(set(doc) - _TOP_KEYS, key=str)]

    cfg_seed = doc.get("seed")
    if cfg_seed is not None:
        cfg_seed = _int(cfg_seed, "seed", errors, minimum=0)
    if _uses_randomness({k: v for k, v in doc.items() if k != "witness"}) and cfg_seed is None:
        errors.append("seed: required because the config draws random values")

    A, T = _problem(doc.get("problem"), errors)
    method = doc.get("method", "gppa" if A is not None else "km")
    if method not in ("km", "gppa"):
        errors.append(f"method: expected 'km' or 'gppa', got {method!r}")
    elif method == "gppa" and T is not None:
        errors.append("method: gppa needs a monotone problem")
    elif method == "km" and A is not None:
        errors.append("method: a monotone problem runs with gppa")

    dim = A.dim if A is not None else (T.dim if T is not None else None)
    x0 = None
    x0_spec = doc.get("x0")
    if x0_spec is None:
        errors.append("x0: required (coordinates or {random: {scale, dim}})")
    elif isinstance(x0_spec, dict):
        r = x0_spec.get("random")
        if not isinstance(r, dict) or set(x0_spec) != {"random"}:
            errors.append("x0: a mapping must be {random: {scale, dim}}")
        else:
            n = r.get("dim", dim)
            scale = r.get("scale", 1.0)
            if n is None:
                errors.append("x0.random.dim: needed when the problem has no fixed dimension")
            elif cfg_seed is not None and isinstance(scale, (int, float)) and scale > 0:
                n = _int(n, "x0.random.dim", errors, minimum=1)
                if n is not None:
                    x0 = float(scale) * np.random.default_rng([cfg_seed, _X0_STREAM]).normal(size=n)
            elif not (isinstance(scale, (int, float)) and scale > 0):
                errors.append("x0.random.scale: must be a positive number")
            if x0 is not None and dim is not None and x0.size != dim:
                errors.append(f"x0: has dimension {x0.size}, the problem lives in R^{dim}")
                x0 = None
    else:
        x0 = _vector(x0_spec, "x0", errors, dim)

    K = _int(doc.get("horizon"), "horizon", errors, minimum=0) if "horizon" in doc else None
    if "horizon" not in doc:
        errors.append("horizon: required")

    s = None
    if x0 is not None:
        sched_spec = doc.get("schedule", {})
        if not isinstance(sched_spec, dict):
            errors.append("schedule: must be a mapping")
        else:
            try:
                s = make_schedule(sched_spec, dim=x0.size, seed=cfg_seed)
            except ConfigError as exc:
                errors.extend(exc.errors)

    family = None
    if A is not None and s is not None:
        family = resolvent_family(A, s.c_at)
    elif T is not None:
        family = constant_family(T)

    certs = doc.get("certificates", [])
    if not isinstance(certs, list) or not all(isinstance(c, str) for c in certs):
        errors.append("certificates: must be a list of names")
        certs = []
    for c in certs:
        if c not in CERTIFICATES:
            errors.append(f"certificates: unknown certificate '{c}' (known: {', '.join(CERTIFICATES)})")
    if len(set(certs)) != len(certs):
        errors.append("certificates: duplicate names")

    fixed = family.fixed_set if family is not None else (A.zero_set if A is not None else None)
    problem_ok = A is not None or T is not None
    for c in certs:
        if c in _NEEDS_GPPA and method != "gppa":
            errors.append(f"certificates: '{c}' needs a GPPA run on a monotone problem")
        if c in _NEEDS_FIXED and problem_ok and fixed is None:
            errors.append(f"certificates: '{c}' needs a known fixed-point set, which this problem does not expose")

    reference = None
    if "reference" in doc:
        reference = _vector(doc["reference"], "reference", errors, None if x0 is None else x0.size)
        if reference is not None and fixed is not None and not fixed.contains(reference):
            errors.append("reference: point does not lie in the fixed-point set")
    elif fixed is not None and x0 is not None:
        reference = fixed.project(x0)

    witness = doc.get("witness")
    if "contraction" in certs:
        if not isinstance(witness, dict):
            errors.append("witness: 'contraction' needs {kappa, delta} or {estimate: true, delta, samples}")
        elif witness.get("estimate"):
            if cfg_seed is None:
                errors.append("seed: required because the witness is estimated by sampling")
            if method == "gppa" and A is not None and A.residual_norm is None:
                errors.append(f"witness: cannot estimate; {A.name} exposes no residual d(0, Ax)")
        if isinstance(witness, dict):
            extra = set(witness) - {"kappa", "delta", "anchor", "estimate", "samples"}
            errors.extend(f"witness: unknown key '{k}'" for k in sorted(extra))
            delta = witness.get("delta")
            if not (isinstance(delta, (int, float)) and delta > 0):
                errors.append("witness.delta: must be a positive number")
            if not witness.get("estimate"):
                kappa = witness.get("kappa")
                if not (isinstance(kappa, (int, float)) and kappa >= 0):
                    errors.append("witness.kappa: must be a non-negative number")

    probes = doc.get("probes")
    if probes is not None:
        if not isinstance(probes, list):
            errors.append("probes: must be a list of indices")
            probes = None
        else:
            probes = [_int(p, "probes", errors, minimum=0) for p in probes]
            if K is not None and any(p is not None and p > K for p in probes):
                errors.append(f"probes: indices must lie in 0..{K}")

    stability = doc.get("stability", {}) or {}
    exact_family = family
    if not isinstance(stability, dict):
        errors.append("stability: must be a mapping")
        stability = {}
    else:
        errors.extend(f"stability: unknown key '{k}'" for k in sorted(set(stability) - {"exact_c", "tail", "horizon"}))
        if "exact_c" in stability:
            if A is None:
                errors.append("stability.exact_c: only meaningful for monotone problems")
            elif x0 is not None:
                try:
                    exact_s = make_schedule({"c": stability["exact_c"]}, dim=x0.size, seed=cfg_seed)
                    exact_family = resolvent_family(A, exact_s.c_at)
                except ConfigError as exc:
                    errors.extend(f"stability.{m}" for m in exc.errors)

    tolerances = doc.get("tolerances", {}) or {}
    if not isinstance(tolerances, dict):
        errors.append("tolerances: must be a mapping")
        tolerances = {}
    for name, tol in tolerances.items():
        if name not in certs:
            errors.append(f"tolerances: '{name}' is not a requested certificate")
        if not (isinstance(tol, (int, float)) and not isinstance(tol, bool) and tol >= 0):
            errors.append(f"tolerances.{name}: must be a non-negative number")

    output = doc.get("output", {}) or {}
    if not isinstance(output, dict):
        errors.append("output: must be a mapping")
        output = {}
    fmts = output.get("formats", ["csv"])
    if not isinstance(fmts, list) or not set(fmts) <= {"csv", "json"}:
        errors.append("output.formats: list drawn from csv, json")

    if s is not None and family is not None and K:
        report = summability_probe(s, family.alpha_at, K)
        for hyp in sorted(s.declared):
            v = report.verdicts[hyp]
            if v.status == "violated":
                errors.append(f"schedule.declared: '{hyp}' is contradicted by the schedule at k={v.k} ({v.reason})")

    if errors:
        raise ConfigError(list(dict.fromkeys(errors)))
    return ExperimentConfig(
        document=doc,
        method=method,
        family=family,
        monotone=A,
        schedule=s,
        x0=x0,
        horizon=K,
        certificates=tuple(certs),
        seed=cfg_seed,
        probes=probes,
        tolerances={k: float(v) for k, v in tolerances.items()},
        output=output,
        reference=reference,
        witness=witness,
        stability=stability,
        exact_family=exact_family,
    )


def make_witness(cfg: ExperimentConfig) -> SubregularityWitness:
    """Witness from the config: given (kappa, delta) or estimated by seeded sampling."""
    from .diagnostics import estimate_subregularity

    w = cfg.witness
    anchor = np.asarray(w.get("anchor", cfg.reference), dtype=np.float64)
    if w.get("estimate"):
        if cfg.method == "gppa":
            residual = cfg.monotone.residual_norm
        else:
            T = cfg.family.at(0)
            residual = lambda x: float(np.linalg.norm(x - T(x)))
        return estimate_subregularity(residual, cfg.fixed_set, anchor, float(w["delta"]),
                                      int(w.get("samples", 1000)), cfg.seed)
    return SubregularityWitness(anchor, float(w["kappa"]), float(w["delta"]))
