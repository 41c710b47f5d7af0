import csv
import io
import json
import math

import numpy as np
import pytest

from kmlab.engines import (
    Trace,
    default_probes,
    run_gppa,
    run_km,
    run_translated,
    stability_harness,
    trace_from_csv,
    trace_to_csv,
    trace_to_json,
)
from kmlab.errors import AbortedTrace, InputError
from kmlab.monotone import catalog_monotone, resolvent_family
from kmlab.operators import catalog_nonexpansive, constant_family, relax
from kmlab.schedules import make_schedule


def sched(spec=None, dim=1, seed=0):
    return make_schedule(spec or {}, dim=dim, seed=seed)


def test_run_km_lambda_zero_is_constant():
    T = catalog_nonexpansive({"name": "rotation", "theta": 0.4})
    t = run_km(constant_family(T), sched({"lambda": 0}, dim=2), [1.0, 2.0], 10)
    assert len(t.records) == 11
    assert all(np.array_equal(r.x, [1.0, 2.0]) for r in t.records)


def test_run_km_zero_map_halves():
    T = catalog_nonexpansive({"name": "zero", "dim": 1})
    t = run_km(constant_family(T), sched({"lambda": 0.5}), [1.0], 30)
    for r in t.records:
        assert r.x[0] == 2.0 ** -r.k


def test_run_km_rotation_norms():
    T = catalog_nonexpansive({"name": "rotation", "theta": math.pi / 2})
    t = run_km(constant_family(T), sched({"lambda": 0.5}, dim=2), [1.0, 0.0], 40)
    for r in t.records:
        assert np.linalg.norm(r.x) == pytest.approx(2.0 ** (-r.k / 2), rel=1e-12)


def test_run_km_records_y_before_error_and_dist():
    T = catalog_nonexpansive({"name": "projection", "set": {"name": "box", "lo": [0, 0], "hi": [1, 1]}})
    s = sched({"lambda": 1, "error": {"direction": [1, 0], "magnitude": 0.5}}, dim=2)
    t = run_km(constant_family(T), s, [3.0, -2.0], 3)
    r0, r1 = t.records[0], t.records[1]
    assert r0.y.tolist() == [1.0, 0.0]
    assert r1.x.tolist() == [1.5, 0.0]
    assert r0.dist_to_set == pytest.approx(math.hypot(2, 2))
    assert r0.residual == pytest.approx(math.hypot(2, 2))
    assert r1.dist_to_set == pytest.approx(0.5)


def test_run_km_warns_outside_interval():
    T = catalog_nonexpansive({"name": "zero", "dim": 1})
    t = run_km(constant_family(T), sched({"lambda": 2.5}), [1.0], 3)
    assert t.warnings and "k=0" in t.warnings[0]


def test_run_km_aborts_on_blowup():
    T = catalog_nonexpansive({"name": "identity", "dim": 1})
    s = sched({"error": {"direction": [1.0], "magnitude": "10.0**min(k, 200)"}})
    with pytest.raises(AbortedTrace) as info:
        run_km(constant_family(T), s, [0.0], 100)
    partial = info.value.trace
    assert partial.aborted and 10 <= len(partial.records) <= 15
    assert all(np.isfinite(r.x).all() for r in partial.records)


def test_run_gppa_soft_threshold_finite_termination():
    A = catalog_monotone({"name": "l1", "w": 1.0, "dim": 1})
    t = run_gppa(A, sched({"lambda": 1, "c": 1}), [3.0], 6)
    assert [r.x[0] for r in t.records] == [3.0, 2.0, 1.0, 0.0, 0.0, 0.0, 0.0]
    assert [r.scaled_residual for r in t.records[:5]] == [1.0, 1.0, 1.0, 0.0, 0.0]
    assert t.kind == "gppa"


def test_run_gppa_identity_halves():
    A = catalog_monotone({"name": "identity", "r": 1.0, "dim": 1})
    t = run_gppa(A, sched({"lambda": 1, "c": 1}), [8.0], 60)
    for r in t.records:
        assert r.x[0] == 8.0 * 2.0 ** -r.k
        assert r.dist_to_set == abs(r.x[0])


def test_run_gppa_lambda_zero_constant():
    A = catalog_monotone({"name": "skew"})
    t = run_gppa(A, sched({"lambda": 0}, dim=2), [1.0, 1.0], 5)
    assert all(r.x.tolist() == [1.0, 1.0] for r in t.records)


def test_replay_is_bit_identical():
    A = catalog_monotone({"name": "sum", "terms": [{"name": "identity", "r": 0.3, "dim": 3}, {"name": "l1", "w": 0.2, "dim": 3}]})
    spec = {"lambda": {"kind": "uniform", "low": 0.2, "high": 1.8}, "c": "1 + 1/(k+1)", "error": {"direction": "random", "magnitude": "2**(-k)"}}
    a = run_gppa(A, make_schedule(spec, dim=3, seed=5), [1.0, -2.0, 3.0], 50)
    b = run_gppa(A, make_schedule(spec, dim=3, seed=5), [1.0, -2.0, 3.0], 50)
    assert trace_to_csv(a) == trace_to_csv(b)
    assert all(np.array_equal(r.x, q.x) and np.array_equal(r.y, q.y) for r, q in zip(a.records, b.records))


def test_km_distance_bound_invariant():
    rng = np.random.default_rng(0)
    specs = [
        {"name": "rotation", "theta": 1.0},
        {"name": "projection", "set": {"name": "ball", "center": [0, 0], "radius": 1}},
        {"name": "combination", "t": 0.5, "of": {"name": "projection", "set": {"name": "halfspace", "normal": [1, 1], "offset": 0}}},
    ]
    for spec in specs:
        T = catalog_nonexpansive(spec)
        s = make_schedule({"lambda": {"kind": "uniform", "low": 0, "high": 1 / T.alpha}, "error": {"direction": "random", "magnitude": "0.5**k"}}, dim=2, seed=int(rng.integers(1000)))
        x0 = rng.normal(scale=3, size=2)
        t = run_km(constant_family(T), s, x0, 40)
        xbar = T.fixed_set.project(x0)
        d0 = np.linalg.norm(x0 - xbar)
        acc = 0.0
        for k in range(40):
            acc += s.eta_e(k)
            assert np.linalg.norm(t.records[k + 1].x - xbar) <= d0 + acc + 1e-10


def test_gppa_descent_invariant():
    A = catalog_monotone({"name": "quadratic", "Q": [[2, 0], [0, 0.5]], "b": [1, -1]})
    s = make_schedule({"lambda": {"kind": "uniform", "low": 0, "high": 2}, "c": {"kind": "uniform", "low": 0.1, "high": 5}}, dim=2, seed=8)
    t = run_gppa(A, s, [4.0, 4.0], 50)
    xbar = A.zero_set.project(np.zeros(2))
    for r in t.records:
        lam = s.lambda_at(r.k)
        rhs = np.sum((r.x - xbar) ** 2) - lam * (2 - lam) * r.residual ** 2
        assert np.sum((r.y - xbar) ** 2) <= rhs + 1e-10


def test_translated_exact_source_replays_bitwise():
    A = catalog_monotone({"name": "l1", "w": 0.3, "dim": 2})
    s = sched({"lambda": 1.3, "c": "1 + k/10"}, dim=2)
    src = run_gppa(A, s, [5.0, -7.0], 40)
    fam = resolvent_family(A, s.c_at)
    for i in (0, 7, 20):
        tr = run_translated(fam, s, src, i, 40 - i)
        assert np.array_equal(tr.records[0].x, src.records[i].x)
        for rec in tr.records:
            assert np.array_equal(rec.x, src.records[i + rec.k].x)


def test_translated_limit_estimate_and_range():
    A = catalog_monotone({"name": "l1", "w": 1.0, "dim": 1})
    s = sched({"lambda": 1, "c": 1})
    src = run_gppa(A, s, [3.0], 10)
    fam = resolvent_family(A, s.c_at)
    tr = run_translated(fam, s, src, 0, 10)
    assert tr.limit_estimate is not None and tr.limit_estimate.tolist() == [0.0]
    with pytest.raises(InputError):
        run_translated(fam, s, src, 11, 3)
    slow = run_translated(resolvent_family(catalog_monotone({"name": "identity", "r": 0.01}), s.c_at), s, src, 0, 5)
    assert slow.limit_estimate is None


def test_translated_error_bound_identity():
    A = catalog_monotone({"name": "identity", "r": 1.0, "dim": 2})
    s = make_schedule({"lambda": 1, "c": 1, "error": {"direction": "random", "magnitude": "2**(-k)"}}, dim=2, seed=3)
    src = run_gppa(A, s, [3.0, -1.0], 30)
    fam = resolvent_family(A, s.c_at)
    for i in (1, 5, 12):
        tr = run_translated(fam, s, src, i - 1, 30)
        for k in range(0, 30 - i + 1):
            bound = sum(s.eta_e(j) for j in range(i - 1, i + k))
            assert np.linalg.norm(src.records[i + k].x - tr.records[k + 1].x) <= bound + 1e-12


def test_stability_exact_method_passes_with_zero_deviation():
    A = catalog_monotone({"name": "identity", "r": 1.0, "dim": 1})
    s = sched({"lambda": 1, "c": 1})
    fam = resolvent_family(A, s.c_at)
    step = lambda k, x: relax(x, fam.at(k)(x), s.lambda_at(k))
    cert = stability_harness(fam, step, s, [4.0], 20, [0, 5, 10])
    assert cert.passed
    assert max(cert.details["deviation"]) == 0.0


def test_stability_drifting_parameter():
    A = catalog_monotone({"name": "identity", "r": 1.0, "dim": 1})
    s = sched({"lambda": 1, "c": "1 + 2**(-k)"})
    exact = resolvent_family(A, lambda k: 1.0)
    step = lambda k, x: A.resolvent(s.c_at(k), x)
    cert = stability_harness(exact, step, s, [4.0], 40, None)
    assert cert.passed
    dev = cert.details["deviation"]
    xs = cert.details["trace"].records
    for k in range(40):
        xk = xs[k].x
        bound = abs(1 - s.c_at(k)) * np.linalg.norm(xk - exact.at(k)(xk))
        assert dev[k] <= bound + 1e-15


def test_stability_constant_errors_still_valid():
    A = catalog_monotone({"name": "l1", "w": 1.0, "dim": 1})
    s = make_schedule({"lambda": 1, "c": 1, "error": {"direction": "random", "magnitude": 0.5}}, dim=1, seed=2)
    fam = resolvent_family(A, s.c_at)
    step = lambda k, x: relax(x, fam.at(k)(x), 1.0)
    cert = stability_harness(fam, step, s, [5.0], 40, [0, 10, 20, 30])
    assert cert.passed


def test_default_probes():
    assert default_probes(60) == [0, 15, 30, 45]
    assert default_probes(2) == [0, 1]


def test_csv_contract_and_round_trip():
    A = catalog_monotone({"name": "skew"})
    s = make_schedule({"lambda": 0.9, "c": 0.7, "error": {"direction": "random", "magnitude": "0.3**k"}}, dim=2, seed=1)
    t = run_gppa(A, s, [1 / 3, math.pi], 12)
    text = trace_to_csv(t)
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["k", "x0", "x1", "residual", "scaled_residual", "dist_to_set", "fejer_slack"]
    assert len(rows) == 14
    back = trace_from_csv(text)
    for r, (k, x) in zip(t.records, back):
        assert k == r.k and np.array_equal(x, r.x)
    assert rows[-1][-1] == ""  # no step after the final record
    doc = json.loads(json.dumps(trace_to_json(t)))
    assert doc["meta"]["horizon"] == 12 and len(doc["records"]) == 13


def test_stability_reports_deviation_trend():
    A = catalog_monotone({"name": "identity", "r": 1.0, "dim": 1})
    s = sched({"lambda": 1, "c": "1 + 1/(k+1)"})
    exact = resolvent_family(A, lambda k: 1.0)
    step = lambda k, x: A.resolvent(s.c_at(k), x)
    cert = stability_harness(exact, step, s, [4.0], 200, None)
    assert cert.details["deviation_trend"] == "convergent-trend"
