"""Certificates and estimators for the convergence theory of KM and GPPA runs.

Every certificate consumes a recorded :class:`~kmlab.engines.Trace`.  Where
a function takes ``alpha_at`` and ``s`` they override the per-record values
of alpha_k, lambda_k and eta_k||e_k||; when omitted the recorded values are
used, so hand-built traces can be certified as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .certificates import Certificate
from .engines import Trace
from .errors import CapabilityError, PreconditionError, SubregularityFailure
from .monotone import MaxMonotoneMap, SubregularityWitness
from .points import as_point
from .schedules import SummabilityReport, Verdict, classify_trend, decade_ratio
from .sets import SetDescriptor

SLACK_TOL = 1e-10
FIXED_TOL = 1e-10
TRANSFER_TOL = 1e-6
ARRIVAL_TOL = 1e-13
EXCLUDE_RESIDUAL = 1e-13
EXCLUDE_DISTANCE = 1e-10
RATE_MARGIN = 1e-6
RATIO_MARGIN = 1e-2


def _steps(t: Trace, alpha_at, s):
    """Per-step (lambda_k, alpha_k, eta_k||e_k||) for k < K."""
    out = []
    for r in t.records[:-1]:
        lam = s.lambda_at(r.k) if s is not None else r.lam
        alpha = alpha_at(r.k) if alpha_at is not None else r.alpha
        ee = s.eta_e(r.k) if s is not None else (r.eta_e or 0.0)
        if lam is None or alpha is None:
            raise CapabilityError("trace lacks lambda/alpha records; pass alpha_at and s")
        out.append((float(lam), float(alpha), float(ee)))
    return out


def _check_fixed(t: Trace, xbar: np.ndarray) -> None:
    if t.family is None:
        return
    for r in t.records[:-1]:
        if np.linalg.norm(t.family.at(r.k)(xbar) - xbar) > FIXED_TOL:
            raise PreconditionError(f"reference point is not fixed by the map applied at k={r.k}")


def _closed_interval(steps) -> int | None:
    for k, (lam, alpha, _) in enumerate(steps):
        if not (0 <= lam and lam * alpha <= 1 + 1e-15):
            return k
    return None


# ---- Fejer-type certificates --------------------------------------------------

QF_CONTEXT = "||x_(k+1)-xb||^2 <= ||x_k-xb||^2 - lam_k(1/alpha_k-lam_k)||x_k-T_k x_k||^2 + eps_k, eps_k = eta_k||e_k||(2||y_k-xb|| + eta_k||e_k||)"


def quasi_fejer_certificate(t: Trace, xbar, alpha_at: Callable[[int], float] | None = None, s=None) -> Certificate:
    """Per-step quasi-Fejer slack relative to a common fixed point ``xbar``."""
    if any(r.y is None for r in t.records[:-1]):
        raise CapabilityError("quasi-Fejer certificate needs the pre-error iterates y_k")
    xbar = as_point(xbar, dim=t.records[0].x.size, name="xbar")
    _check_fixed(t, xbar)
    steps = _steps(t, alpha_at, s)
    bad = _closed_interval(steps)
    if bad is not None:
        return Certificate.not_applicable("quasi-fejer", "lambda_k in [0, 1/alpha_k]", SLACK_TOL, QF_CONTEXT,
                                          {"first_violation": bad})
    slacks = []
    for r, nxt, (lam, alpha, ee) in zip(t.records, t.records[1:], steps):
        dx2 = float((r.x - xbar) @ (r.x - xbar))
        dy = float(np.linalg.norm(r.y - xbar))
        eps = ee * (2 * dy + ee)
        dn2 = float((nxt.x - xbar) @ (nxt.x - xbar))
        slacks.append(dx2 - lam * (1 / alpha - lam) * r.residual ** 2 + eps - dn2)
    return Certificate.from_slacks("quasi-fejer", slacks, SLACK_TOL, QF_CONTEXT)


def distance_bound_certificate(t: Trace, xbar, s=None) -> Certificate:
    """||x_(k+1) - xbar|| <= ||x_0 - xbar|| + sum_(i<=k) eta_i||e_i||."""
    context = "||x_(k+1)-xb|| <= ||x_0-xb|| + sum_(i<=k) eta_i||e_i||"
    xbar = as_point(xbar, dim=t.records[0].x.size, name="xbar")
    _check_fixed(t, xbar)
    steps = _steps(t, None if t.family is None else t.family.alpha_at, s)
    bad = _closed_interval(steps)
    if bad is not None:
        return Certificate.not_applicable("distance-bound", "lambda_k in [0, 1/alpha_k]", SLACK_TOL, context,
                                          {"first_violation": bad})
    d0 = float(np.linalg.norm(t.records[0].x - xbar))
    acc, slacks = 0.0, []
    for nxt, (_, _, ee) in zip(t.records[1:], steps):
        acc += ee
        slacks.append(d0 + acc - float(np.linalg.norm(nxt.x - xbar)))
    return Certificate.from_slacks("distance-bound", slacks, SLACK_TOL, context)


def gppa_descent_certificate(t: Trace, xbar) -> Certificate:
    """||y_k - xbar||^2 <= ||x_k - xbar||^2 - lam_k(2 - lam_k)||x_k - J x_k||^2 on a GPPA trace."""
    context = "||y_k-xb||^2 <= ||x_k-xb||^2 - lam_k(2-lam_k)||x_k-J_(c_k A)x_k||^2"
    if t.kind != "gppa":
        raise CapabilityError("descent certificate needs a GPPA trace")
    xbar = as_point(xbar, dim=t.records[0].x.size, name="xbar")
    _check_fixed(t, xbar)
    bad = next((r.k for r in t.records if not 0 <= r.lam <= 2), None)
    if bad is not None:
        return Certificate.not_applicable("gppa-descent", "lambda_k in [0, 2]", SLACK_TOL, context,
                                          {"first_violation": bad})
    slacks = [
        float((r.x - xbar) @ (r.x - xbar)) - r.lam * (2 - r.lam) * r.residual ** 2 - float((r.y - xbar) @ (r.y - xbar))
        for r in t.records
    ]
    return Certificate.from_slacks("gppa-descent", slacks, SLACK_TOL, context)


def residual_summability(t: Trace, alpha_at: Callable[[int], float] | None = None, s=None) -> SummabilityReport:
    """Partial sums of lam_k(1/alpha_k - lam_k)||x_k - T_k x_k||^2 plus the smallest residual seen."""
    steps = _steps(t, alpha_at, s)
    terms = [max(0.0, lam * (1 / alpha - lam)) * r.residual ** 2 for r, (lam, alpha, _) in zip(t.records, steps)]
    curve = np.cumsum(terms).tolist() if terms else []
    trend = classify_trend(terms)
    ratio = decade_ratio(terms)
    if trend == "divergent-trend":
        verdict = Verdict("violated", len(terms) - 1, f"weighted residual series shows {trend} (ratio {ratio!r})")
    elif trend == "inconclusive":
        verdict = Verdict("inconclusive", None, "horizon too short for a trend")
    else:
        verdict = Verdict("satisfied-so-far", None, f"{trend} (ratio {ratio!r})")
    residuals = [r.residual for r in t.records]
    kmin = int(np.argmin(residuals))
    name = "weighted_residual_sq"
    return SummabilityReport(
        horizon=len(terms),
        partial_sums={name: curve[-1] if curve else 0.0},
        curves={name: curve},
        terms={name: terms},
        trends={name: trend},
        flags={},
        verdicts={"weighted-residual-summable": verdict},
        groups={},
        threshold=0.99,
        extras={"min_residual": residuals[kmin], "min_residual_k": kmin},
    )


# ---- metric subregularity -------------------------------------------------------

def _ball_samples(anchor: np.ndarray, delta: float, samples: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    n = anchor.size
    g = rng.normal(size=(samples, n))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    radius = delta * rng.uniform(size=samples) ** (1.0 / n)
    return anchor + g * radius[:, None]


def estimate_subregularity(residual_fn: Callable[[np.ndarray], float], target: SetDescriptor, anchor, delta: float,
                           samples: int = 1000, seed: int = 0) -> SubregularityWitness:
    """Sampled modulus kappa_hat = max d(x, target)/residual(x) over the ball B[anchor; delta].

    Points with residual below 1e-13 are skipped when they lie in the target;
    otherwise they prove the error bound fails and SubregularityFailure is raised.
    """
    anchor = as_point(anchor, name="anchor")
    if not target.contains(anchor, FIXED_TOL):
        raise PreconditionError("anchor does not lie in the target set")
    kappa = 0.0
    for x in _ball_samples(anchor, float(delta), int(samples), seed):
        d = target.distance(x)
        res = float(residual_fn(x))
        if res < EXCLUDE_RESIDUAL:
            if d >= EXCLUDE_DISTANCE:
                raise SubregularityFailure(x, d)
            continue
        kappa = max(kappa, d / res)
    return SubregularityWitness(anchor, kappa, float(delta), empirical=True)


def subreg_transfer_check(A: MaxMonotoneMap, gamma: float, witness_for_A: SubregularityWitness, samples: int = 1000,
                          seed: int = 0) -> Certificate:
    """Compare the sampled modulus of Id - J_(gamma A) with the bound 1 + kappa/gamma.

    When A exposes d(0, Ax) the reverse direction kappa_A <= kappa' * gamma is
    checked as well, with both moduli sampled on the same ball.
    """
    context = "d(x, zer A) <= (1 + kappa/gamma) ||x - J_(gamma A) x||; d(x, zer A) <= kappa' gamma d(0, Ax)"
    if A.zero_set is None:
        raise CapabilityError(f"{A.name} exposes no zero set")
    g = float(gamma)
    w = witness_for_A
    bound = 1.0 + w.effective_kappa / g
    try:
        measured = estimate_subregularity(lambda x: float(np.linalg.norm(x - A.resolvent(g, x))), A.zero_set,
                                          w.anchor, w.delta, samples, seed).kappa
    except SubregularityFailure as exc:
        return Certificate.from_slacks("subregularity-transfer", [-math.inf], TRANSFER_TOL, context,
                                       details={"failure": str(exc)})
    slacks = [bound - measured]
    details = {"measured": measured, "bound": bound, "ratio": measured / bound}
    if A.residual_norm is not None:
        try:
            kappa_A = estimate_subregularity(A.residual_norm, A.zero_set, w.anchor, w.delta, samples, seed).kappa
            slacks.append(measured * g - kappa_A)
            details["kappa_A"] = kappa_A
        except SubregularityFailure as exc:
            details["reverse_failure"] = str(exc)
    return Certificate.from_slacks("subregularity-transfer", slacks, TRANSFER_TOL, context, details=details)


# ---- contraction and rates --------------------------------------------------------

def _rho(lam: float, alpha: float, gamma_k: float) -> tuple[float, float]:
    """(rho_k, radicand) for rho_k^2 = 1 - lam(1 - lam alpha)/(alpha gamma_k^2)."""
    if gamma_k == 0.0:
        return 0.0, 0.0
    rad = 1.0 - lam * (1.0 - lam * alpha) / (alpha * gamma_k * gamma_k)
    return math.sqrt(max(rad, 0.0)), rad


def _gamma_k(t: Trace, k: int, kappa: float, s) -> float:
    if t.kind == "gppa":
        c = s.c_at(k) if s is not None else t.records[k].c
        return 1.0 + kappa / c
    return kappa


def contraction_check(t: Trace, target: SetDescriptor, alpha_at: Callable[[int], float] | None, s,
                      witness: SubregularityWitness) -> Certificate:
    """Per-step linear decrease d(x_(k+1), S) <= rho_k d(x_k, S) of an exact run.

    For KM traces the witness bounds Id - T_k; for GPPA traces it bounds A and
    gamma_k = 1 + kappa/c_k.  Needs an exact run, lam_k in ]0, 1/alpha_k[ and
    every iterate inside B[anchor; delta].
    """
    name = "contraction"
    context = "d(x_(k+1), S) <= rho_k d(x_k, S), rho_k = (1 - lam_k(1-lam_k alpha_k)/(alpha_k gamma_k^2))^(1/2)"
    if not target.contains(witness.anchor, FIXED_TOL):
        raise PreconditionError("witness anchor does not lie in the target set")
    steps = _steps(t, alpha_at, s)
    for k, (lam, alpha, ee) in enumerate(steps):
        if ee != 0.0:
            return Certificate.not_applicable(name, "exact method (eta_k ||e_k|| = 0)", SLACK_TOL, context, {"k": k})
        if not (0 < lam and lam * alpha < 1):
            return Certificate.not_applicable(name, "lambda_k in ]0, 1/alpha[", SLACK_TOL, context, {"k": k})
    for r in t.records:
        if np.linalg.norm(r.x - witness.anchor) > witness.delta * (1 + 1e-12):
            return Certificate.not_applicable(name, "iterates stay in B[anchor; delta]", SLACK_TOL, context,
                                              {"exit_index": r.k})
    kappa = witness.effective_kappa
    dist = [target.distance(r.x) for r in t.records]
    rhos, slacks = [], []
    for k, (lam, alpha, _) in enumerate(steps):
        rho, rad = _rho(lam, alpha, _gamma_k(t, k, kappa, s))
        rhos.append(rho)
        slacks.append(rho * dist[k] - dist[k + 1])
    range_ok = all(0.0 <= r < 1.0 for r in rhos)
    slacks.append(0.0 if range_ok else -math.inf)
    return Certificate.from_slacks(name, slacks, SLACK_TOL, context,
                                   details={"rho": rhos, "rho_in_unit_interval": range_ok, "distances": dist})


@dataclass(frozen=True)
class RateReport:
    target: np.ndarray
    root_rates: list[float]
    limsup_estimate: float
    per_step_ratios: list[float]
    predicted_rho: list[float]
    verdict: str
    arrived_at: int | None = None
    included_ratios: tuple[float, ...] = ()
    window: tuple[int, int] = (0, 0)

    def to_json_dict(self) -> dict:
        return {
            "target": self.target.tolist(),
            "limsup_estimate": self.limsup_estimate,
            "verdict": self.verdict,
            "arrived_at": self.arrived_at,
            "window": list(self.window),
            "root_rates": self.root_rates,
            "per_step_ratios": self.per_step_ratios,
            "predicted_rho": self.predicted_rho,
        }


def linear_rate_estimate(t: Trace, xhat, target: SetDescriptor | None = None, witness: SubregularityWitness | None = None,
                         s=None, window_fraction: float = 0.1) -> RateReport:
    """Root rates ||x_k - xhat||^(1/k) and per-step distance ratios.

    The limsup is estimated as the largest root rate over the final
    ``window_fraction`` of k; iterates that hit ``xhat`` exactly record rate 0
    and are skipped.  Distance ratios use ``target`` (or the recorded
    distances, or ||x_k - xhat||); once a distance drops below 1e-13 the run
    counts as arrived and later ratios are recorded as 0 and skipped.
    The verdict is R-linear when the run arrived, or when both the root-rate
    limsup and the geometric mean of the late ratios sit clearly below 1.
    """
    xhat = as_point(xhat, dim=t.records[0].x.size, name="xhat")
    K = t.records[-1].k
    roots, root_ok = [], []
    for r in t.records[1:]:
        d = float(np.linalg.norm(r.x - xhat))
        if d == 0.0:
            roots.append(0.0)
            root_ok.append(False)
        else:
            roots.append(d ** (1.0 / r.k))
            root_ok.append(True)
    width = max(1, math.ceil(window_fraction * len(roots)))
    window = [v for v, ok in zip(roots[-width:], root_ok[-width:]) if ok]
    limsup = max(window) if window else 0.0

    if target is not None:
        dists = [target.distance(r.x) for r in t.records]
    elif all(r.dist_to_set is not None for r in t.records):
        dists = [r.dist_to_set for r in t.records]
    else:
        dists = [float(np.linalg.norm(r.x - xhat)) for r in t.records]
    ratios, included, arrived = [], [], None
    for k in range(K):
        if arrived is None and dists[k] < ARRIVAL_TOL:
            arrived = k
        if arrived is not None:
            ratios.append(0.0)
            continue
        q = dists[k + 1] / dists[k]
        ratios.append(q)
        included.append(q)
    if arrived is None and dists and dists[-1] < ARRIVAL_TOL:
        arrived = K

    predicted = []
    if witness is not None:
        kappa = witness.effective_kappa
        for r in t.records[:-1]:
            lam = s.lambda_at(r.k) if s is not None else r.lam
            predicted.append(_rho(lam, r.alpha, _gamma_k(t, r.k, kappa, s))[0])

    # sublinear runs also have root rates below 1 at any finite horizon, so the
    # late per-step ratios must stay clearly below 1 as well
    lo = max(0, K - width)
    late = [q for q in ratios[lo:] if q > 0.0] if arrived is None else []
    late_mean = math.exp(math.fsum(math.log(q) for q in late) / len(late)) if late else 0.0
    steady = limsup < 1 - RATE_MARGIN and late_mean <= 1 - RATIO_MARGIN
    verdict = "R-linear" if (arrived is not None or steady) else "inconclusive"
    return RateReport(xhat, roots, limsup, ratios, predicted, verdict, arrived, tuple(included),
                      (max(1, K - width + 1), K))


def linear_rate_certificate(report: RateReport) -> Certificate:
    """Wrap a rate report as a certificate: pass when the run is R-linear."""
    context = "limsup_k ||x_k - xhat||^(1/k) < 1"
    if report.arrived_at is not None:
        return Certificate.from_slacks("linear-rate", [0.0], 0.0, context, details={"arrived_at": report.arrived_at})
    return Certificate.from_slacks("linear-rate", [1 - RATE_MARGIN - report.limsup_estimate], 0.0, context,
                                   details={"limsup_estimate": report.limsup_estimate})


# ---- GPPA-specific -------------------------------------------------------------

def scaled_residual_monotone_check(t: Trace, s=None) -> Certificate:
    """(1/c_(k+1))||x_(k+1) - J x_(k+1)|| <= (1/c_k)||x_k - J x_k|| + (eta_k/c_(k+1))||e_k||."""
    name = "scaled-residual"
    context = "(1/c_(k+1))||x_(k+1)-J_(k+1)x_(k+1)|| <= (1/c_k)||x_k-J_k x_k|| + (eta_k/c_(k+1))||e_k||"
    if t.kind != "gppa":
        raise CapabilityError("scaled residual check needs a GPPA trace")
    c = [s.c_at(r.k) if s is not None else r.c for r in t.records]
    for k in range(1, len(c)):
        if c[k] < c[k - 1]:
            return Certificate.not_applicable(name, "c_(k+1) >= c_k", SLACK_TOL, context, {"k": k})
    slacks = []
    for r, nxt in zip(t.records, t.records[1:]):
        ee = s.eta_e(r.k) if s is not None else (r.eta_e or 0.0)
        slacks.append(r.residual / c[r.k] + ee / c[nxt.k] - nxt.residual / c[nxt.k])
    return Certificate.from_slacks(name, slacks, SLACK_TOL, context)


def cluster_inclusion_check(t: Trace, A: MaxMonotoneMap | None = None, tol: float = 1e-8) -> Certificate:
    """Finite-dimensional surrogate for cluster points lying in zer A.

    Passes when the smallest scaled residual and the final distance to zer A
    are both at most ``tol``.
    """
    if t.kind != "gppa":
        raise CapabilityError("cluster inclusion check needs a GPPA trace")
    A = A if A is not None else t.monotone
    if A is None or A.zero_set is None:
        raise CapabilityError("cluster inclusion check needs a zero-set descriptor")
    scaled = [r.scaled_residual for r in t.records]
    kmin = int(np.argmin(scaled))
    final = A.zero_set.distance(t.records[-1].x)
    return Certificate.from_slacks(
        "cluster-inclusion",
        [tol - scaled[kmin], tol - final],
        0.0,
        "min_k (1/c_k)||x_k - J_(c_k A)x_k|| <= tol and d(x_K, zer A) <= tol",
        indices=[kmin, t.records[-1].k],
        details={"min_scaled_residual": scaled[kmin], "final_distance": final, "tol": tol},
    )
