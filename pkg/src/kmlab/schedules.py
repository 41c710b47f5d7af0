"""Parameter sequences (lambda_k, c_k, eta_k, e_k) and finite-horizon hypothesis probes."""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .errors import ConfigError
from .points import as_point

VALIDATION_HORIZON = 1000
DEFAULT_THRESHOLD = 0.99
_ERROR_STREAM = 0xE220

# ---- formulas -------------------------------------------------------------------

_FUNCS = {
    "min": min,
    "max": max,
    "abs": abs,
    "sqrt": math.sqrt,
    "exp": math.exp,
    "log": math.log,
    "floor": math.floor,
    "ceil": math.ceil,
}
_CONSTS = {"pi": math.pi, "e": math.e}
_ALLOWED = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Constant, ast.Name, ast.Load, ast.Call,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.Mod, ast.FloorDiv, ast.USub, ast.UAdd,
)


def _compile_expression(text: str) -> Callable[[int], float]:
    """Compile an arithmetic expression in ``k`` after whitelisting its syntax tree."""
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"formula {text!r}: {exc.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED):
            raise ConfigError(f"formula {text!r}: '{type(node).__name__}' is not allowed")
        if isinstance(node, ast.Name) and node.id != "k" and node.id not in _FUNCS and node.id not in _CONSTS:
            raise ConfigError(f"formula {text!r}: unknown name '{node.id}'")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS):
            raise ConfigError(f"formula {text!r}: only {', '.join(sorted(_FUNCS))} may be called")
        if isinstance(node, ast.Call) and node.keywords:
            raise ConfigError(f"formula {text!r}: keyword arguments are not allowed")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ConfigError(f"formula {text!r}: only numeric constants are allowed")
    code = compile(tree, "<formula>", "eval")
    env = {"__builtins__": {}, **_FUNCS, **_CONSTS}

    def f(k: int) -> float:
        return float(eval(code, env, {"k": k}))

    return f


def compile_formula(spec: Any, seed: int | None = None, stream: int = 0) -> Callable[[int], float]:
    """Turn a formula record into a function of the iteration index k.

    Accepted forms: a number (constant); an expression string in ``k``; or a
    mapping with ``kind`` among constant, geometric (a*r**k), harmonic
    (a/(k+1)**p), linear (a + b*k), piecewise and uniform (seeded draw per k).
    Any mapping may carry ``cap`` (upper clip) and ``floor`` (lower clip).
    """
    if isinstance(spec, bool):
        raise ConfigError("formula must be a number, string or mapping, not a boolean")
    if isinstance(spec, (int, float)):
        v = float(spec)
        return lambda k: v
    if isinstance(spec, str):
        return _compile_expression(spec)
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"formula must be a number, expression string or mapping with 'kind', got {spec!r}")
    kind = spec["kind"]
    g = lambda key, default=None: float(spec[key]) if key in spec else default
    try:
        if kind == "constant":
            v = g("value")
            base = lambda k: v
        elif kind == "geometric":
            a, r = g("a", 1.0), g("r")
            base = lambda k: a * r ** k
        elif kind == "harmonic":
            a, p = g("a", 1.0), g("p", 1.0)
            base = lambda k: a / (k + 1) ** p
        elif kind == "linear":
            a, b = g("a", 0.0), g("b")
            base = lambda k: a + b * k
        elif kind == "piecewise":
            pieces = [(int(p["until"]), compile_formula(p["value"], seed, stream)) for p in spec["pieces"]]
            other = compile_formula(spec.get("otherwise", 0.0), seed, stream)

            def base(k):
                for until, f in pieces:
                    if k < until:
                        return f(k)
                return other(k)
        elif kind == "uniform":
            if seed is None:
                raise ConfigError("uniform formula draws random values: a seed is required")
            lo, hi = g("low", 0.0), g("high", 1.0)

            def base(k):
                return float(np.random.default_rng([seed, stream, k]).uniform(lo, hi))
        else:
            raise ConfigError(f"unknown formula kind '{kind}'")
    except KeyError as exc:
        raise ConfigError(f"formula kind '{kind}' is missing {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"formula kind '{kind}': {exc}") from None

    cap, floor = g("cap"), g("floor")
    if cap is None and floor is None:
        return base
    return lambda k: min(max(base(k), -math.inf if floor is None else floor), math.inf if cap is None else cap)


def _uses_randomness(spec: Any) -> bool:
    if isinstance(spec, dict):
        return spec.get("kind") == "uniform" or any(_uses_randomness(v) for v in spec.values())
    if isinstance(spec, list):
        return any(_uses_randomness(v) for v in spec)
    return False


# ---- schedules ----------------------------------------------------------------

HARD_HYPOTHESES = (
    "lambda-in-closed-interval",
    "lambda-in-open-interval",
    "lambda-in-0-2",
    "lambda-in-open-0-2",
    "lambda-in-half-open-0-2",
    "lambda-equals-1",
    "c-nondecreasing",
    "c-bounded",
    "eta-zero",
)
SERIES_HYPOTHESES = (
    "sum-eta-e-finite",
    "lambda-alpha-divergent",
    "lambda-2-divergent",
    "sum-c2-divergent",
    "c-ratio-summable",
)
KNOWN_HYPOTHESES = HARD_HYPOTHESES + SERIES_HYPOTHESES

# which hypotheses each convergence statement needs
HYPOTHESIS_GROUPS = {
    "km-distance-bound": ("lambda-in-closed-interval",),
    "km-quasi-fejer": ("lambda-in-closed-interval", "sum-eta-e-finite"),
    "km-residual-liminf": ("lambda-in-closed-interval", "sum-eta-e-finite", "lambda-alpha-divergent"),
    "km-linear-rate": ("lambda-in-open-interval", "eta-zero"),
    "gppa-exact-linear-rate": ("lambda-in-open-0-2", "eta-zero"),
    "gppa-weak-a1": ("sum-eta-e-finite", "sum-c2-divergent", "lambda-equals-1"),
    "gppa-weak-a2": ("sum-eta-e-finite", "lambda-2-divergent", "c-bounded", "lambda-in-half-open-0-2", "c-nondecreasing"),
    "gppa-weak-fixed-c": ("sum-eta-e-finite", "c-ratio-summable", "lambda-in-half-open-0-2", "lambda-2-divergent"),
    "gppa-strong": ("lambda-in-open-0-2", "sum-eta-e-finite"),
}

_SCHEDULE_KEYS = {"lambda", "c", "eta", "error", "declared", "c_cap", "c_ref", "trend_threshold"}


@dataclass(frozen=True)
class Schedule:
    lambda_at: Callable[[int], float]
    c_at: Callable[[int], float]
    eta_at: Callable[[int], float]
    error_at: Callable[[int], np.ndarray]
    seed: int | None
    declared: frozenset
    dim: int
    spec: dict = field(default_factory=dict, compare=False)
    c_cap: float | None = None

    def eta_e(self, k: int) -> float:
        """eta_k * ||e_k||."""
        eta = self.eta_at(k)
        return 0.0 if eta == 0.0 else eta * float(np.linalg.norm(self.error_at(k)))


def make_schedule(spec: dict | None, dim: int, seed: int | None = None) -> Schedule:
    """Build a deterministic schedule from a record.

    Keys: ``lambda`` (default 1), ``c`` (default 1), ``eta`` (default 1 when
    ``error`` is present, else 0), ``error`` = {``direction``: "random" or a
    vector, ``magnitude``: formula (default 1)}, ``declared`` hypotheses,
    ``c_cap`` (bound used for the sup c_k check) and ``trend_threshold``.
    """
    spec = dict(spec or {})
    errors = [f"schedule: unknown key '{k}'" for k in sorted(set(spec) - _SCHEDULE_KEYS)]
    if _uses_randomness(spec) and seed is None:
        errors.append("schedule: a seed is required because the schedule draws random values")

    def formula(key, default, stream):
        try:
            return compile_formula(spec.get(key, default), seed, stream)
        except ConfigError as exc:
            errors.extend(f"schedule.{key}: {m}" for m in exc.errors)
            return None

    lam = formula("lambda", 1.0, 1)
    c = formula("c", 1.0, 2)
    err_spec = spec.get("error")
    eta = formula("eta", 1.0 if err_spec is not None else 0.0, 3)

    error_at = lambda k: np.zeros(dim)
    if err_spec is not None:
        if not isinstance(err_spec, dict):
            errors.append("schedule.error must be a mapping")
        else:
            bad = set(err_spec) - {"direction", "magnitude"}
            errors.extend(f"schedule.error: unknown key '{b}'" for b in sorted(bad))
            try:
                mag = compile_formula(err_spec.get("magnitude", 1.0), seed, 4)
            except ConfigError as exc:
                errors.extend(f"schedule.error.magnitude: {m}" for m in exc.errors)
                mag = None
            direction = err_spec.get("direction", "random")
            if direction == "random":
                if seed is None:
                    errors.append("schedule.error: random directions require a seed")

                def unit(k):
                    v = np.random.default_rng([seed, _ERROR_STREAM, k]).normal(size=dim)
                    return v / np.linalg.norm(v)
            else:
                try:
                    u = as_point(direction, dim=dim, name="error direction")
                    if np.linalg.norm(u) == 0:
                        raise ValueError("error direction must be nonzero")
                    u = u / np.linalg.norm(u)
                    unit = lambda k: u
                except ValueError as exc:
                    errors.append(f"schedule.error.direction: {exc}")
                    unit = None
            if mag is not None and unit is not None:
                error_at = lambda k: mag(k) * unit(k)
                if not errors:
                    for k in range(VALIDATION_HORIZON):
                        m = mag(k)
                        if not (math.isfinite(m) and m >= 0):
                            errors.append(f"schedule.error.magnitude: value {m} at k={k} is not a finite non-negative number")
                            break

    declared = spec.get("declared", []) or []
    if not isinstance(declared, list):
        errors.append("schedule.declared must be a list")
        declared = []
    for d in declared:
        if d not in KNOWN_HYPOTHESES:
            errors.append(f"schedule.declared: unknown hypothesis '{d}'")

    c_cap = spec.get("c_cap")
    if c_cap is not None:
        try:
            c_cap = float(c_cap)
        except (TypeError, ValueError):
            errors.append("schedule.c_cap must be a number")

    if not errors:
        for key, f, positive in (("lambda", lam, False), ("c", c, True), ("eta", eta, False)):
            for k in range(VALIDATION_HORIZON):
                try:
                    v = f(k)
                except (ArithmeticError, ValueError) as exc:
                    errors.append(f"schedule.{key}: evaluation failed at k={k}: {exc}")
                    break
                if not math.isfinite(v) or v < 0 or (positive and v <= 0):
                    need = "positive" if positive else "non-negative"
                    errors.append(f"schedule.{key}: value {v} at k={k} is not finite and {need}")
                    break
    if errors:
        raise ConfigError(errors)
    return Schedule(lam, c, eta, error_at, seed, frozenset(declared), dim, spec, c_cap)


# ---- probing ------------------------------------------------------------------

@dataclass(frozen=True)
class Verdict:
    status: str  # satisfied-so-far | violated | inconclusive
    k: int | None = None
    reason: str = ""

    def to_json_dict(self) -> dict:
        return {"status": self.status, "k": self.k, "reason": self.reason}


@dataclass(frozen=True)
class SummabilityReport:
    horizon: int
    partial_sums: dict[str, float]
    curves: dict[str, list[float]]
    terms: dict[str, list[float]]
    trends: dict[str, str]
    flags: dict[str, bool]
    verdicts: dict[str, Verdict]
    groups: dict[str, Verdict]
    threshold: float
    declared: tuple[str, ...] = ()
    extras: dict[str, Any] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "trend_rule": f"decade-increment ratio <= {self.threshold} means convergent-trend",
            "partial_sums": self.partial_sums,
            "trends": self.trends,
            "flags": self.flags,
            "declared": list(self.declared),
            "verdicts": {k: v.to_json_dict() for k, v in self.verdicts.items()},
            "groups": {k: v.to_json_dict() for k, v in self.groups.items()},
            "extras": self.extras,
            "curves": self.curves,
        }


def decade_ratio(terms) -> float | None:
    """Ratio of the partial-sum increment over the last decade of k to the one before.

    For terms ~ k^-p this tends to 10^(1-p): below 1 exactly when the series
    converges.  Horizons under 100 use base sqrt(K) instead of 10.
    """
    K = len(terms)
    if K < 4:
        return None
    base = 10.0 if K >= 100 else math.sqrt(K)
    k1 = int(K / base)
    k0 = int(K / base ** 2)
    S = np.concatenate([[0.0], np.cumsum(np.asarray(terms, dtype=float))])
    d1, d0 = S[K] - S[k1], S[k1] - S[k0]
    if d1 == 0:
        return 0.0
    if d0 == 0:
        return math.inf
    return float(d1 / d0)


def classify_trend(terms, threshold: float = DEFAULT_THRESHOLD) -> str:
    r = decade_ratio(terms)
    if r is None:
        return "inconclusive"
    return "convergent-trend" if r <= threshold else "divergent-trend"


def summability_probe(s: Schedule, alpha_at: Callable[[int], float], K: int, threshold: float | None = None,
                      c_ref: float | None = None) -> SummabilityReport:
    """Finite-horizon evidence for every hypothesis used by the convergence statements.

    Hard conditions (interval membership, monotonicity, caps) are checked for
    k < K and a violation cites the first offending k.  Series conditions are
    classified by :func:`classify_trend`; a trend contradicting the hypothesis
    is reported as violated at k = K - 1, the index where the evidence ends.
    Terms lambda(2 - lambda) and lambda(1/alpha - lambda) are clipped at 0 so
    partial sums stay monotone; out-of-range lambdas are caught by the hard checks.
    """
    K = int(K)
    if K < 1:
        raise ValueError("K must be at least 1")
    if threshold is None:
        threshold = float(s.spec.get("trend_threshold", DEFAULT_THRESHOLD))
    ks = range(K)
    lam = [float(s.lambda_at(k)) for k in ks]
    c = [float(s.c_at(k)) for k in ks]
    alpha = [float(alpha_at(k)) for k in ks]
    ee = [s.eta_e(k) for k in ks]
    if c_ref is None:
        c_ref = float(s.spec.get("c_ref", c[-1]))

    terms = {
        "eta_e": ee,
        "lambda_2": [max(0.0, l * (2 - l)) for l in lam],
        "lambda_alpha": [max(0.0, l * (1 / a - l)) for l, a in zip(lam, alpha)],
        "c_squared": [v * v for v in c],
        "c_ratio": [abs(v / c_ref - 1) for v in c],
    }
    curves = {name: np.cumsum(t).tolist() for name, t in terms.items()}
    partial = {name: (curve[-1] if curve else 0.0) for name, curve in curves.items()}
    trends = {name: classify_trend(t, threshold) for name, t in terms.items()}

    def first(pred, start=0):
        for k in range(start, K):
            if not pred(k):
                return k
        return None

    def hard(k_bad, what):
        if k_bad is None:
            return Verdict("satisfied-so-far", None, f"{what} for all k < {K}")
        return Verdict("violated", k_bad, f"{what} fails at k={k_bad}")

    v: dict[str, Verdict] = {}
    v["lambda-in-closed-interval"] = hard(first(lambda k: 0 <= lam[k] and lam[k] * alpha[k] <= 1 + 1e-15), "lambda_k in [0, 1/alpha_k]")
    v["lambda-in-open-interval"] = hard(first(lambda k: 0 < lam[k] and lam[k] * alpha[k] < 1), "lambda_k in ]0, 1/alpha_k[")
    v["lambda-in-0-2"] = hard(first(lambda k: 0 <= lam[k] <= 2), "lambda_k in [0, 2]")
    v["lambda-in-open-0-2"] = hard(first(lambda k: 0 < lam[k] < 2), "lambda_k in ]0, 2[")
    v["lambda-in-half-open-0-2"] = hard(first(lambda k: 0 < lam[k] <= 2), "lambda_k in ]0, 2]")
    v["lambda-equals-1"] = hard(first(lambda k: lam[k] == 1.0), "lambda_k = 1")
    v["c-nondecreasing"] = hard(first(lambda k: c[k] >= c[k - 1], start=1), "c_k >= c_(k-1)")
    v["eta-zero"] = hard(first(lambda k: ee[k] == 0.0), "eta_k ||e_k|| = 0")
    if s.c_cap is None:
        v["c-bounded"] = Verdict("inconclusive", None, "no c_cap configured; max c_k so far = %r" % max(c))
    else:
        v["c-bounded"] = hard(first(lambda k: c[k] <= s.c_cap), f"c_k <= c_cap = {s.c_cap!r}")

    def series(name, series_key, want):
        t = trends[series_key]
        ratio = decade_ratio(terms[series_key])
        if t == "inconclusive":
            return Verdict("inconclusive", None, "horizon too short for a trend")
        if t == want:
            return Verdict("satisfied-so-far", None, f"{t} (decade ratio {ratio!r})")
        return Verdict("violated", K - 1, f"{t} (decade ratio {ratio!r}) contradicts {name}")

    v["sum-eta-e-finite"] = series("sum eta_k||e_k|| < inf", "eta_e", "convergent-trend")
    v["lambda-alpha-divergent"] = series("sum lambda_k(1/alpha_k - lambda_k) = inf", "lambda_alpha", "divergent-trend")
    v["lambda-2-divergent"] = series("sum lambda_k(2 - lambda_k) = inf", "lambda_2", "divergent-trend")
    v["sum-c2-divergent"] = series("sum c_k^2 = inf", "c_squared", "divergent-trend")
    v["c-ratio-summable"] = series("sum |c_k/c - 1| < inf", "c_ratio", "convergent-trend")

    groups = {}
    for gname, members in HYPOTHESIS_GROUPS.items():
        bad = [m for m in members if v[m].status == "violated"]
        unsure = [m for m in members if v[m].status == "inconclusive"]
        if bad:
            groups[gname] = Verdict("violated", v[bad[0]].k, "unmet: " + ", ".join(bad))
        elif unsure:
            groups[gname] = Verdict("inconclusive", None, "undecided: " + ", ".join(unsure))
        else:
            groups[gname] = Verdict("satisfied-so-far", None, "all hypotheses hold so far")

    flags = {
        "c_nondecreasing": v["c-nondecreasing"].status != "violated",
        "lambda_in_open_interval": v["lambda-in-open-interval"].status != "violated",
    }
    extras = {"c_ref": c_ref, "c_min": min(c), "c_max": max(c)}
    return SummabilityReport(K, partial, curves, terms, trends, flags, v, groups, threshold,
                             tuple(sorted(s.declared)), extras)
