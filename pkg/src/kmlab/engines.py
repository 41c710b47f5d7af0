"""Iteration engines: inexact KM, GPPA, translated exact sequences and the stability harness."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .certificates import Certificate
from .errors import AbortedTrace, ContractViolation, InputError
from .monotone import MaxMonotoneMap, resolvent_family
from .operators import OperatorFamily, perturb, relax
from .points import as_point, frozen
from .schedules import Schedule, classify_trend
from .sets import SetDescriptor

BLOWUP = 1e12
LIMIT_TOL = 1e-12
SLACK_TOL = 1e-10


@dataclass(frozen=True)
class TraceRecord:
    k: int
    x: np.ndarray
    y: np.ndarray | None
    residual: float
    scaled_residual: float | None = None
    dist_to_set: float | None = None
    fejer_slack: float | None = None
    lam: float | None = None
    alpha: float | None = None
    c: float | None = None
    eta_e: float | None = None


@dataclass
class Trace:
    records: list[TraceRecord]
    meta: dict[str, Any] = field(default_factory=dict)
    kind: str = "km"
    warnings: list[str] = field(default_factory=list)
    aborted: bool = False
    family: OperatorFamily | None = field(default=None, repr=False, compare=False)
    monotone: MaxMonotoneMap | None = field(default=None, repr=False, compare=False)
    fixed_set: SetDescriptor | None = field(default=None, repr=False, compare=False)
    anchor: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def horizon(self) -> int:
        return self.records[-1].k if self.records else -1

    @property
    def xs(self) -> np.ndarray:
        return np.array([r.x for r in self.records])


@dataclass(frozen=True)
class TranslatedRecord:
    k: int
    x: np.ndarray


@dataclass(frozen=True)
class TranslatedTrace:
    start_index: int
    records: list[TranslatedRecord]
    limit_estimate: np.ndarray | None = None


def _run(family: OperatorFamily, s: Schedule, x0, K: int, kind: str, monotone: MaxMonotoneMap | None = None,
         anchor=None) -> Trace:
    x = as_point(x0, name="x0")
    if family.dim is not None and x.size != family.dim:
        raise ContractViolation(f"x0 has dimension {x.size}, operators act on R^{family.dim}")
    if s.dim != x.size:
        raise ContractViolation(f"schedule errors live in R^{s.dim}, x0 in R^{x.size}")
    K = int(K)
    if K < 0:
        raise InputError("horizon K must be non-negative")
    C = family.fixed_set
    if anchor is None and C is not None:
        anchor = C.project(x)
    if anchor is not None:
        anchor = frozen(as_point(anchor, dim=x.size, name="anchor"))

    trace = Trace([], kind=kind, family=family, monotone=monotone, fixed_set=C, anchor=anchor)
    trace.meta = {
        "kind": kind,
        "problem": family.description,
        "horizon": K,
        "seed": s.seed,
        "schedule": s.spec,
        "dim": int(x.size),
        "anchor": None if anchor is None else anchor.tolist(),
    }
    for k in range(K + 1):
        T = family.at(k)
        lam = float(s.lambda_at(k))
        alpha = T.alpha
        if not (0.0 <= lam and lam * alpha <= 1.0 + 1e-15):
            trace.warnings.append(f"k={k}: lambda={lam!r} outside [0, 1/alpha] = [0, {1 / alpha!r}]")
        Tx = T(x)
        y = relax(x, Tx, lam)
        residual = float(np.linalg.norm(x - Tx))
        c = float(s.c_at(k)) if kind == "gppa" else None
        rec = dict(
            k=k,
            x=frozen(x),
            y=frozen(y),
            residual=residual,
            scaled_residual=residual / c if c is not None else None,
            dist_to_set=C.distance(x) if C is not None else None,
            lam=lam,
            alpha=alpha,
            c=c,
        )
        if k == K:
            trace.records.append(TraceRecord(**rec))
            break
        eta = float(s.eta_at(k))
        e = s.error_at(k) if eta != 0.0 else None
        z = perturb(y, eta, e)
        ee = 0.0 if e is None else eta * float(np.linalg.norm(e))
        rec["eta_e"] = ee
        if anchor is not None:
            dx2 = float((x - anchor) @ (x - anchor))
            dy = float(np.linalg.norm(y - anchor))
            eps = ee * (2 * dy + ee)
            dz2 = float((z - anchor) @ (z - anchor))
            rec["fejer_slack"] = dx2 - lam * (1 / alpha - lam) * residual ** 2 + eps - dz2
        trace.records.append(TraceRecord(**rec))
        nz = float(np.linalg.norm(z))
        if not math.isfinite(nz) or nz > BLOWUP:
            trace.aborted = True
            trace.meta["aborted_at"] = k + 1
            raise AbortedTrace(f"iterate norm {nz:.3e} exceeds {BLOWUP:.0e} at k={k + 1}", trace)
        x = z
    return trace


def run_km(family: OperatorFamily, s: Schedule, x0, K: int, anchor=None) -> Trace:
    """Run x_{k+1} = (1 - lam_k) x_k + lam_k T_k x_k + eta_k e_k for k < K.

    Records K + 1 entries; y_k is the step before the error is added.  When
    the family has a common fixed set, ``dist_to_set`` is filled and the
    per-step quasi-Fejer slack is measured against ``anchor`` (default: the
    projection of x0 onto that set).  Steps with lambda outside [0, 1/alpha]
    are recorded in ``warnings``.
    """
    return _run(family, s, x0, K, "km", anchor=anchor)


def run_gppa(A: MaxMonotoneMap, s: Schedule, x0, K: int, anchor=None) -> Trace:
    """Generalized proximal point run: the KM recursion with T_k = J_{c_k A}."""
    return _run(resolvent_family(A, s.c_at), s, x0, K, "gppa", monotone=A, anchor=anchor)


def run_translated(family: OperatorFamily, s: Schedule, source: Trace, i: int, K: int) -> TranslatedTrace:
    """Exact sequence xi_{k+1}(i) = G_{k+i} xi_k(i) started at the source iterate x_i."""
    i, K = int(i), int(K)
    if not (0 <= i < len(source.records)):
        raise InputError(f"start index {i} outside the source trace (0..{len(source.records) - 1})")
    if K < 0:
        raise InputError("K must be non-negative")
    xi = source.records[i].x
    recs = [TranslatedRecord(0, xi)]
    for k in range(K):
        xi = frozen(relax(xi, family.at(k + i)(xi), float(s.lambda_at(k + i))))
        recs.append(TranslatedRecord(k + 1, xi))
    limit = None
    if K >= 1 and np.linalg.norm(recs[-1].x - recs[-2].x) < LIMIT_TOL:
        limit = recs[-1].x
    return TranslatedTrace(i, recs, limit)


def default_probes(K: int) -> list[int]:
    return sorted({0, K // 4, K // 2, (3 * K) // 4} & set(range(max(K, 1))))


def stability_harness(
    exact_family: OperatorFamily,
    perturbed_step: Callable[[int, np.ndarray], np.ndarray],
    s: Schedule,
    x0,
    K: int,
    probe_indices: Sequence[int] | None = None,
    translate_horizon: int | None = None,
    tail: int = 10,
) -> Certificate:
    """Compare an approximate method with translated runs of the exact method.

    The approximate sequence is x_{k+1} = F_k x_k + eta_k e_k with F_k given by
    ``perturbed_step``; G_k = (1 - lam_k) Id + lam_k T_k comes from
    ``exact_family``.  With the effective error e~_k = x_{k+1} - G_k x_k the
    checked bounds are

    * restart: ||x_{i+k} - xi_{k+1}(i-1)|| <= sum_{j=i-1}^{i+k-1} ||e~_j||
    * cross-translation: ||xi_{k-p}(i+p) - xi_k(i)|| <= sum_{j=i}^{i+p-1} ||e~_j||, k >= p
    * tail: ||x_K - xi_bar|| <= sum_{j>=K-tail} ||e~_j|| + ||xi_tail(K-tail) - xi_bar||

    where xi_bar is the end point of the first probe's translated run.
    """
    K = int(K)
    H = K if translate_horizon is None else int(translate_horizon)
    probes = sorted(set(default_probes(K) if probe_indices is None else (int(i) for i in probe_indices)))
    if any(not (0 <= i <= K) for i in probes):
        raise InputError(f"probe indices must lie in 0..{K}")

    x = as_point(x0, name="x0")
    records, eff, dev = [], [], []
    for k in range(K + 1):
        G = exact_family.at(k)
        lam = float(s.lambda_at(k))
        Gx = relax(x, G(x), lam)
        records.append(TraceRecord(k, frozen(x), frozen(Gx), float(np.linalg.norm(x - G(x))), lam=lam, alpha=G.alpha))
        if k == K:
            break
        Fx = as_point(perturbed_step(k, x), dim=x.size, name="F_k x")
        eta = float(s.eta_at(k))
        nxt = perturb(Fx, eta, s.error_at(k) if eta != 0.0 else None)
        ee = s.eta_e(k)
        dev.append(float(np.linalg.norm(Fx - Gx)) + ee)
        eff.append(float(np.linalg.norm(nxt - Gx)))
        x = nxt
    trace = Trace(records, {"kind": "approximate", "problem": exact_family.description, "horizon": K, "seed": s.seed},
                  "approximate", family=exact_family, fixed_set=exact_family.fixed_set)
    csum = np.concatenate([[0.0], np.cumsum(eff)])  # csum[j] = sum_{m<j} ||e~_m||

    def run(i, n):
        return run_translated(exact_family, s, trace, i, n)

    slacks, labels = [], []
    restart_worst = math.inf
    for i in probes:
        if i == 0:
            continue
        tr = run(i - 1, K - i + 1)
        for k in range(K - i + 1):
            bound = csum[i + k] - csum[i - 1]
            sl = bound - float(np.linalg.norm(records[i + k].x - tr.records[k + 1].x))
            slacks.append(sl)
            labels.append(("restart", i, k))
            restart_worst = min(restart_worst, sl)

    runs = {i: run(i, H) for i in probes}
    cross_worst = math.inf
    for a, i in enumerate(probes):
        for j in probes[a + 1:]:
            p = j - i
            bound = csum[j] - csum[i]
            for k in range(p, H + 1):
                sl = bound - float(np.linalg.norm(runs[j].records[k - p].x - runs[i].records[k].x))
                slacks.append(sl)
                labels.append(("cross", i, j, k))
                cross_worst = min(cross_worst, sl)

    ends = {i: runs[i].records[-1].x for i in probes}
    gaps = [float(np.linalg.norm(ends[i] - ends[j])) for a, i in enumerate(probes) for j in probes[a + 1:]]
    xi_bar = ends[probes[0]] if probes else None

    tail_info = None
    if xi_bar is not None and 1 <= tail <= K:
        start = K - tail
        tr = run(start, tail)
        bound = float(csum[K] - csum[start]) + float(np.linalg.norm(tr.records[-1].x - xi_bar))
        dist = float(np.linalg.norm(records[K].x - xi_bar))
        slacks.append(bound - dist)
        labels.append(("tail", start))
        tail_info = {"start": start, "distance": dist, "bound": bound}

    details = {
        "probes": probes,
        "deviation": dev,
        # the summability of the deviation series is reported as a trend only
        "deviation_trend": classify_trend(dev),
        "effective_error": eff,
        "restart_worst_slack": None if restart_worst == math.inf else restart_worst,
        "cross_worst_slack": None if cross_worst == math.inf else cross_worst,
        "limits": {i: ends[i].tolist() for i in probes},
        "limits_converged": {i: runs[i].limit_estimate is not None for i in probes},
        "max_pairwise_limit_distance": max(gaps) if gaps else 0.0,
        "common_limit": None if xi_bar is None else xi_bar.tolist(),
        "tail": tail_info,
        "labels": labels,
        "trace": trace,
    }
    return Certificate.from_slacks(
        "translated-stability",
        slacks,
        SLACK_TOL,
        "||x_(i+k) - xi_(k+1)(i-1)|| <= sum_(j=i-1)^(i+k-1) ||e_j||; ||xi_(k-p)(i+p) - xi_k(i)|| <= sum_(j=i)^(i+p-1) ||e_j||",
        details=details,
    )


# ---- export -------------------------------------------------------------------

def _fmt(v) -> str:
    return "" if v is None else format(float(v), ".17g")


def trace_to_csv(t: Trace) -> str:
    """One row per k: k, coordinates, residual, scaled_residual, dist_to_set, fejer_slack."""
    n = t.records[0].x.size if t.records else 0
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", *[f"x{i}" for i in range(n)], "residual", "scaled_residual", "dist_to_set", "fejer_slack"])
    for r in t.records:
        w.writerow([r.k, *[_fmt(v) for v in r.x], _fmt(r.residual), _fmt(r.scaled_residual),
                    _fmt(r.dist_to_set), _fmt(r.fejer_slack)])
    return buf.getvalue()


def trace_from_csv(text: str) -> list[tuple[int, np.ndarray]]:
    rows = list(csv.reader(io.StringIO(text)))
    n = sum(1 for h in rows[0] if h.startswith("x"))
    return [(int(r[0]), np.array([float(v) for v in r[1:1 + n]])) for r in rows[1:]]


def trace_to_json(t: Trace) -> dict:
    def opt(v):
        return None if v is None else float(v)

    return {
        "meta": t.meta,
        "kind": t.kind,
        "aborted": t.aborted,
        "warnings": list(t.warnings),
        "records": [
            {
                "k": r.k,
                "x": r.x.tolist(),
                "y": None if r.y is None else r.y.tolist(),
                "residual": r.residual,
                "scaled_residual": opt(r.scaled_residual),
                "dist_to_set": opt(r.dist_to_set),
                "fejer_slack": opt(r.fejer_slack),
                "lambda": opt(r.lam),
                "alpha": opt(r.alpha),
                "c": opt(r.c),
                "eta_e": opt(r.eta_e),
            }
            for r in t.records
        ],
    }
