import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kmlab.errors import CapabilityError, ConfigError, HypothesisViolation, PreconditionError
from kmlab.monotone import (
    SubregularityWitness,
    catalog_monotone,
    check_resolvent_firm,
    graph_element,
    reflected_resolvent,
    resolvent,
    resolvent_family,
    resolvent_rescale,
)

from oracles import prox_1d_bruteforce, quadratic_prox_gauss_seidel

MONOTONE_CATALOG = [
    {"name": "identity", "r": 1.0, "dim": 2},
    {"name": "identity", "r": 0.0, "dim": 2},
    {"name": "identity", "r": 3.5, "dim": 3},
    {"name": "quadratic", "Q": [[2.0, 1.0], [1.0, 1.0]], "b": [1.0, -1.0]},
    {"name": "quadratic", "Q": [[1.0, 1.0], [1.0, 1.0]], "b": [1.0, 1.0]},
    {"name": "l1", "w": 1.0, "dim": 1},
    {"name": "l1", "w": 0.7, "dim": 3},
    {"name": "normal_cone", "set": {"name": "box", "lo": [0, 0], "hi": [1, 2]}},
    {"name": "normal_cone", "set": {"name": "ball", "center": [1, 1], "radius": 1.0}},
    {"name": "normal_cone", "set": {"name": "affine", "matrix": [[1, -1, 0]], "rhs": [2]}},
    {"name": "skew"},
    {"name": "skew", "scale": 2.5},
    {"name": "sum", "terms": [{"name": "identity", "r": 0.5, "dim": 2}, {"name": "l1", "w": 1.5, "dim": 2}]},
]


def ids(spec):
    return spec["name"] + "-" + str(abs(hash(str(spec))) % 1000)


# ---- examples -------------------------------------------------------------------

def test_resolvent_l1_example_matches_bruteforce():
    A = catalog_monotone({"name": "l1", "w": 1.0, "dim": 1})
    oracle = prox_1d_bruteforce(np.array([5.0]), 2.0)
    assert resolvent(A, 2.0, [5.0]) == pytest.approx([3.0], abs=1e-15)
    assert oracle == pytest.approx([3.0], abs=1e-9)


def test_resolvent_identity_example():
    A = catalog_monotone({"name": "identity", "r": 1.0, "dim": 1})
    assert resolvent(A, 1.0, [4.0]).tolist() == [2.0]


@pytest.mark.parametrize("spec", MONOTONE_CATALOG, ids=ids)
def test_resolvent_keeps_points_of_the_zero_set(spec):
    A = catalog_monotone(spec)
    if A.zero_set is None:
        return
    z = A.zero_set.project(np.linspace(-2.0, 3.0, A.dim))
    assert np.linalg.norm(resolvent(A, 1.7, z) - z) <= 1e-12


def test_resolvent_rejects_nonpositive_gamma():
    A = catalog_monotone({"name": "l1", "w": 1.0, "dim": 1})
    for g in (0.0, -1.0, float("nan")):
        with pytest.raises(HypothesisViolation):
            resolvent(A, g, [1.0])


def test_reflected_resolvent_examples():
    A = catalog_monotone({"name": "identity", "r": 1.0, "dim": 1})
    assert reflected_resolvent(A, 1.0, [4.0]).tolist() == [0.0]
    B = catalog_monotone({"name": "l1", "w": 1.0, "dim": 1})
    assert reflected_resolvent(B, 1.0, [0.5]).tolist() == [-0.5]
    assert reflected_resolvent(B, 3.0, [0.0]).tolist() == [0.0]


def test_graph_element_examples():
    A = catalog_monotone({"name": "identity", "r": 1.0, "dim": 1})
    p, u = graph_element(A, 2.0, [3.0])
    assert p.tolist() == [1.0] and u.tolist() == [1.0]
    assert A.graph_contains(p, u, 1e-8)
    B = catalog_monotone({"name": "l1", "w": 1.0, "dim": 1})
    p, u = graph_element(B, 1.0, [0.5])
    assert p.tolist() == [0.0] and u.tolist() == [0.5]
    assert B.graph_contains(p, u, 1e-8)
    assert not B.graph_contains(np.array([0.0]), np.array([1.5]), 1e-8)
    p, u = graph_element(B, 1.0, [0.0])
    assert p.tolist() == [0.0] and u.tolist() == [0.0]


def test_resolvent_rescale_examples():
    A = catalog_monotone({"name": "identity", "r": 1.0, "dim": 1})
    cert = resolvent_rescale(A, 1.0, 3.0, [4.0])
    assert cert.passed and cert.details["lhs"] == [2.0] and cert.details["rhs"] == [2.0]
    B = catalog_monotone({"name": "l1", "w": 1.0, "dim": 1})
    cert = resolvent_rescale(B, 2.0, 1.0, [5.0])
    assert cert.passed and cert.details["rhs"] == pytest.approx([3.0])
    cert = resolvent_rescale(B, 1.3, 1.3, [5.0])
    assert cert.details["discrepancy"] == 0.0


def test_check_resolvent_firm_examples():
    A = catalog_monotone({"name": "identity", "r": 1.0, "dim": 1})
    cert = check_resolvent_firm(A, 1.0, [4.0], [0.0])
    assert cert.passed and cert.worst_slack == pytest.approx(8.0)
    cert = check_resolvent_firm(A, 1.0, [0.0], [0.0])
    assert cert.passed and cert.worst_slack == 0.0
    B = catalog_monotone({"name": "l1", "w": 1.0, "dim": 1})
    cert = check_resolvent_firm(B, 1.0, [3.0], [0.0])
    assert cert.worst_slack == pytest.approx(4.0)
    with pytest.raises(PreconditionError):
        check_resolvent_firm(B, 1.0, [3.0], [0.5])


def test_catalog_examples():
    A = catalog_monotone({"name": "l1", "w": 1.0, "dim": 2})
    assert A.zero_set.contains(np.zeros(2)) and not A.zero_set.contains(np.array([0.0, 1e-6]))
    x = np.array([2.5, -0.4])
    assert np.allclose(resolvent(A, 1.0, x), prox_1d_bruteforce(x, 1.0), atol=1e-9)
    S = catalog_monotone({"name": "skew"})
    x = np.array([1.0, 2.0])
    expected = np.linalg.solve(np.eye(2) + 0.8 * np.array([[0.0, 1.0], [-1.0, 0.0]]), x)
    assert np.allclose(resolvent(S, 0.8, x), expected, atol=1e-15)
    I = catalog_monotone({"name": "identity", "r": 1.0, "dim": 1})
    assert resolvent(I, 3.0, [8.0]).tolist() == [2.0]


def test_catalog_errors():
    with pytest.raises(ConfigError):
        catalog_monotone({"name": "quadratic", "Q": [[1.0, 0.0], [0.0, -1.0]], "b": [0.0, 0.0]})
    with pytest.raises(ConfigError):
        catalog_monotone({"name": "quadratic", "Q": [[1.0, 2.0], [0.0, 1.0]], "b": [0.0, 0.0]})
    with pytest.raises(ConfigError):
        catalog_monotone({"name": "warp"})
    with pytest.raises(ConfigError):
        catalog_monotone({"name": "identity", "r": -1.0})
    with pytest.raises(ConfigError):
        catalog_monotone({"name": "sum", "terms": [{"name": "skew"}, {"name": "l1", "dim": 2}]})


def test_quadratic_without_solutions_has_no_zero_set():
    A = catalog_monotone({"name": "quadratic", "Q": [[1.0, 0.0], [0.0, 0.0]], "b": [0.0, 1.0]})
    assert A.zero_set is None
    with pytest.raises(CapabilityError):
        check_resolvent_firm(A, 1.0, [1.0, 1.0], [0.0, 0.0])


def test_quadratic_resolvent_matches_gauss_seidel():
    rng = np.random.default_rng(0)
    for n in range(1, 6):
        B = rng.normal(size=(n, n))
        Q = B @ B.T
        b = rng.normal(size=n)
        A = catalog_monotone({"name": "quadratic", "Q": Q.tolist(), "b": b.tolist()})
        X = rng.normal(scale=3, size=(20, n))
        ref = quadratic_prox_gauss_seidel(Q, b, 0.7, X)
        got = np.array([resolvent(A, 0.7, x) for x in X])
        assert np.max(np.abs(got - ref)) <= 1e-9


# ---- properties ---------------------------------------------------------------

def _zero_sample(A, rng):
    return A.zero_set.project(rng.normal(scale=3, size=A.dim))


@pytest.mark.parametrize("spec", MONOTONE_CATALOG, ids=ids)
def test_resolvent_firmly_nonexpansive_and_fixes_zeros(spec):
    A = catalog_monotone(spec)
    rng = np.random.default_rng(1)
    for _ in range(300):
        g = rng.uniform(0.1, 10)
        x, y = rng.normal(scale=3, size=(2, A.dim))
        Jx, Jy = resolvent(A, g, x), resolvent(A, g, y)
        d = x - y
        lhs = (Jx - Jy) @ (Jx - Jy) + ((x - Jx) - (y - Jy)) @ ((x - Jx) - (y - Jy))
        assert lhs <= d @ d + 1e-10
        z = _zero_sample(A, rng)
        assert np.linalg.norm(resolvent(A, g, z) - z) <= 1e-10


@pytest.mark.parametrize("spec", MONOTONE_CATALOG, ids=ids)
def test_resolvent_drift_bound(spec):
    A = catalog_monotone(spec)
    rng = np.random.default_rng(2)
    for _ in range(300):
        g, m = rng.uniform(0.1, 10, size=2)
        x = rng.normal(scale=3, size=A.dim)
        Jg = resolvent(A, g, x)
        lhs = np.linalg.norm(resolvent(A, m, x) - Jg)
        assert lhs <= abs(1 - m / g) * np.linalg.norm(x - Jg) + 1e-10


@pytest.mark.parametrize("spec", MONOTONE_CATALOG, ids=ids)
def test_reflected_resolvent_nonexpansive(spec):
    A = catalog_monotone(spec)
    rng = np.random.default_rng(3)
    for _ in range(1000):
        c = rng.uniform(0.1, 10)
        x, y = rng.normal(scale=3, size=(2, A.dim))
        lhs = np.linalg.norm(reflected_resolvent(A, c, x) - reflected_resolvent(A, c, y))
        assert lhs <= np.linalg.norm(x - y) + 1e-10


@pytest.mark.parametrize("spec", MONOTONE_CATALOG, ids=ids)
def test_graph_elements_are_in_graph_and_monotone(spec):
    A = catalog_monotone(spec)
    rng = np.random.default_rng(4)
    pairs = []
    for _ in range(100):
        g = rng.uniform(0.1, 10)
        p, u = graph_element(A, g, rng.normal(scale=3, size=A.dim))
        assert A.graph_contains(p, u, 1e-8)
        pairs.append((p, u))
    for (p, u), (q, v) in zip(pairs[:-1], pairs[1:]):
        assert (p - q) @ (u - v) >= -1e-10


@pytest.mark.parametrize("spec", MONOTONE_CATALOG, ids=ids)
def test_resolvent_rescale_identity(spec):
    A = catalog_monotone(spec)
    rng = np.random.default_rng(5)
    for _ in range(100):
        g, m = rng.uniform(0.1, 10, size=2)
        cert = resolvent_rescale(A, g, m, rng.normal(scale=3, size=A.dim))
        assert cert.passed, cert.details


@settings(max_examples=100, deadline=None)
@given(
    x=st.lists(st.floats(-50, 50), min_size=1, max_size=5),
    w=st.floats(0.01, 5),
    g=st.floats(0.1, 10),
)
def test_l1_resolvent_against_bruteforce(x, w, g):
    A = catalog_monotone({"name": "l1", "w": w, "dim": len(x)})
    x = np.array(x)
    assert np.max(np.abs(resolvent(A, g, x) - prox_1d_bruteforce(x, g * w))) <= 1e-8


def test_resolvent_family_members():
    A = catalog_monotone({"name": "l1", "w": 1.0, "dim": 1})
    fam = resolvent_family(A, lambda k: 1.0 + k)
    T = fam.at(2)
    assert T.alpha == 0.5
    assert T(np.array([5.0])).tolist() == [2.0]
    assert fam.fixed_set is A.zero_set


def test_witness_validation():
    w = SubregularityWitness(np.zeros(1), 1.0, 2.0)
    assert w.effective_kappa == 1.0
    assert SubregularityWitness(np.zeros(1), 1.0, 2.0, empirical=True).effective_kappa == pytest.approx(1.001)
    with pytest.raises(ValueError):
        SubregularityWitness(np.zeros(1), float("inf"), 1.0)
    with pytest.raises(ValueError):
        SubregularityWitness(np.zeros(1), 1.0, 0.0)
