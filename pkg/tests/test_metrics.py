import itertools
import math

import numpy as np
import pytest
from scipy.optimize import linprog

from cskuramoto.ensemble import AtomicMeasure, Representation
from cskuramoto.metrics import IncompatibleMarginalsError, adapted_distance, aw2, solve, sq_cost_matrix, w2, w2_fibered
from cskuramoto.kernel import KernelParams

FIRST = Representation.FIRST_ORDER


def weights(rng, n, uniform):
    if uniform:
        return np.full(n, 1.0 / n)
    w = rng.uniform(0.1, 1.0, n)
    return w / math.fsum(w)


def rand_measure(rng, n, d, uniform=False, omegas=None):
    y = rng.normal(size=(n, d)) if omegas is None else omegas[rng.integers(0, len(omegas), n)]
    return AtomicMeasure(rng.normal(size=(n, d)), y, weights(rng, n, uniform), FIRST)


def lp_cost(a, b, cost):
    m, n = cost.shape
    rows = np.kron(np.eye(m), np.ones(n))
    cols = np.kron(np.ones(m), np.eye(n))
    res = linprog(cost.ravel(), A_eq=np.vstack([rows, cols]), b_eq=np.concatenate([a, b]),
                  bounds=(0, None), method="highs")
    assert res.status == 0
    return res.fun


def check_plan(plan, a, b, cost):
    rows, cols = plan.marginals(len(a), len(b))
    assert np.max(np.abs(rows - a)) <= 1e-10 and np.max(np.abs(cols - b)) <= 1e-10
    assert np.all(plan.mass >= 0)
    assert abs(math.fsum(plan.mass * cost[plan.src, plan.dst]) - plan.cost) <= 1e-10


def test_w2_examples():
    rng = np.random.default_rng(0)
    m = rand_measure(rng, 7, 2)
    plan = w2(m, m)
    assert plan.distance == 0.0
    assert sorted(zip(plan.src.tolist(), plan.dst.tolist())) == [(i, i) for i in range(7)]
    a = AtomicMeasure.uniform([[0.0], [2.0]], [[0.0], [0.0]], FIRST)
    b = AtomicMeasure.uniform([[1.0], [3.0]], [[0.0], [0.0]], FIRST)
    plan = w2(a, b, coords="x")
    assert plan.distance == 1.0
    assert sorted(zip(plan.src.tolist(), plan.dst.tolist())) == [(0, 0), (1, 1)]
    # the crossed matching is strictly worse
    assert (9 + 1) / 2 > plan.cost


def test_w2_translation():
    rng = np.random.default_rng(1)
    for _ in range(20):
        m = rand_measure(rng, 5, 3, uniform=True)
        c = rng.normal(size=3)
        shifted = AtomicMeasure(m.x + c, m.y, m.w, FIRST)
        assert w2(m, shifted, coords="x").distance == pytest.approx(np.linalg.norm(c), rel=1e-12)
        brute = min(np.mean(np.sum((m.x - shifted.x[list(p)]) ** 2, axis=1))
                    for p in itertools.permutations(range(5)))
        assert w2(m, shifted, coords="x").cost == pytest.approx(brute, abs=1e-12)


def test_w2_errors():
    a = AtomicMeasure.uniform([[0.0]], [[0.0]], FIRST)
    b = AtomicMeasure.uniform([[0.0, 1.0]], [[0.0, 0.0]], FIRST)
    with pytest.raises(ValueError):
        w2(a, b)
    with pytest.raises(ValueError):
        w2(a, AtomicMeasure.uniform([[0.0]], [[0.0]], Representation.SECOND_ORDER))
    with pytest.raises(ValueError):
        w2(a, a, coords="y")
    with pytest.raises(ValueError):
        solve([1.0], [1.0], [[0.0]], method="nope")


def test_fibered_examples():
    x = np.array([[0.0], [1.0], [0.0], [1.0]])
    om = np.array([[0.0], [0.0], [1.0], [1.0]])
    a = AtomicMeasure.uniform(x, om, FIRST)
    b = AtomicMeasure.uniform(x + [[3.0], [3.0], [4.0], [4.0]], om, FIRST)
    assert w2_fibered(a, a).distance == 0.0
    assert w2_fibered(a, b).distance == pytest.approx(math.sqrt((9 + 16) / 2), rel=1e-14)
    # single fiber reduces to w2 of the conditionals
    rng = np.random.default_rng(2)
    c = rand_measure(rng, 9, 2, omegas=np.array([[0.5, 0.5]]))
    e = rand_measure(rng, 6, 2, omegas=np.array([[0.5, 0.5]]))
    assert w2_fibered(c, e).cost == pytest.approx(w2(c, e, coords="x").cost, abs=1e-12)
    other = AtomicMeasure.uniform(x, om + 1.0, FIRST)
    with pytest.raises(IncompatibleMarginalsError):
        w2_fibered(a, other)
    skew = AtomicMeasure(x, om, [0.1, 0.2, 0.3, 0.4], FIRST)
    with pytest.raises(IncompatibleMarginalsError):
        w2_fibered(a, skew)


def test_aw2_examples():
    a = AtomicMeasure.uniform([[0.0]], [[0.0]], FIRST)
    b = AtomicMeasure.uniform([[1.0]], [[1.0]], FIRST)
    assert aw2(a, b).cost == pytest.approx(2.0, rel=1e-15)
    rng = np.random.default_rng(3)
    m = rand_measure(rng, 12, 2, omegas=rng.normal(size=(3, 2)))
    assert aw2(m, m).distance == 0.0
    one = np.array([[1.0, -1.0]])
    c, e = rand_measure(rng, 5, 2, omegas=one), rand_measure(rng, 8, 2, omegas=one)
    assert aw2(c, e).cost == pytest.approx(w2(c, e, coords="x").cost, abs=1e-12)


def test_adapted_distance_maps_second_order_inputs():
    p = KernelParams(0.5)
    f = AtomicMeasure.uniform([[0.0], [1.0]], [[0.0], [0.0]], Representation.SECOND_ORDER)
    g = AtomicMeasure.uniform([[0.0], [1.0]], [[-1.0], [1.0]], FIRST)
    assert adapted_distance(f, g, p) == pytest.approx(0.0, abs=1e-15)


def test_metric_axioms():
    rng = np.random.default_rng(4)
    for trial in range(60):
        d = 1 + trial % 3
        ms = [rand_measure(rng, int(rng.integers(1, 17)), d, uniform=bool(trial % 2)) for _ in range(3)]
        for fn in (lambda a, b: w2(a, b).distance, lambda a, b: w2(a, b, "x").distance,
                   lambda a, b: aw2(a, b).distance):
            ab, ba = fn(ms[0], ms[1]), fn(ms[1], ms[0])
            assert abs(ab - ba) <= 1e-10
            assert fn(ms[0], ms[2]) <= ab + fn(ms[1], ms[2]) + 1e-8
            assert fn(ms[0], ms[0]) == 0.0


def test_ordering_chain():
    rng = np.random.default_rng(5)
    worst = math.inf
    for trial in range(1000):
        d = 1 + trial % 2
        k = int(rng.integers(1, 4))
        om = rng.normal(size=(k, d))
        n = int(rng.integers(k, 10))
        idx = np.concatenate([np.arange(k), rng.integers(0, k, n - k)])
        w = weights(rng, n, trial % 3 == 0)
        a = AtomicMeasure(rng.normal(size=(n, d)), om[idx], w, FIRST)
        b = AtomicMeasure(rng.normal(size=(n, d)), om[idx], w, FIRST)
        lo, mid, hi = w2(a, b).cost, aw2(a, b).cost, w2_fibered(a, b).cost
        worst = min(worst, mid - lo, hi - mid)
    assert worst >= -1e-8


def test_sorted_matches_general_solvers_in_1d():
    rng = np.random.default_rng(6)
    for trial in range(100):
        m, n = rng.integers(1, 65, 2)
        xa, xb = rng.normal(size=m), rng.normal(size=n)
        a, b = weights(rng, m, False), weights(rng, n, False)
        cost = sq_cost_matrix(xa[:, None], xb[:, None])
        fast = solve(a, b, cost, method="sorted", points_1d=(xa, xb))
        exact = solve(a, b, cost, method="simplex")
        check_plan(fast, a, b, cost)
        check_plan(exact, a, b, cost)
        assert abs(fast.cost - exact.cost) <= 1e-10


def test_simplex_matches_linear_program():
    rng = np.random.default_rng(7)
    for trial in range(40):
        m, n = rng.integers(1, 13, 2)
        a, b = weights(rng, m, False), weights(rng, n, False)
        cost = sq_cost_matrix(rng.normal(size=(m, 2)), rng.normal(size=(n, 2)))
        plan = solve(a, b, cost, method="simplex")
        check_plan(plan, a, b, cost)
        assert plan.cost == pytest.approx(lp_cost(a, b, cost), abs=1e-10)


def test_uniform_solvers_agree_with_brute_force():
    rng = np.random.default_rng(8)
    for trial in range(100):
        n = int(rng.integers(1, 7))
        a = np.full(n, 1.0 / n)
        cost = sq_cost_matrix(rng.normal(size=(n, 2)), rng.normal(size=(n, 2)))
        plans = [solve(a, a, cost, method=k) for k in ("assignment", "simplex", "brute")]
        for p in plans:
            check_plan(p, a, a, cost)
        assert max(p.cost for p in plans) - min(p.cost for p in plans) <= 1e-10


def test_unequal_uniform_counts_use_replication():
    rng = np.random.default_rng(9)
    a, b = np.full(4, 0.25), np.full(6, 1 / 6)
    cost = sq_cost_matrix(rng.normal(size=(4, 3)), rng.normal(size=(6, 3)))
    rep = solve(a, b, cost)
    assert rep.method == "assignment"
    check_plan(rep, a, b, cost)
    assert rep.cost == pytest.approx(solve(a, b, cost, method="simplex").cost, abs=1e-12)
    with pytest.raises(ValueError):
        solve(a, b, cost, method="brute")


def test_plan_csv(tmp_path):
    a = AtomicMeasure.uniform([[0.0], [2.0]], [[0.0], [0.0]], FIRST)
    b = AtomicMeasure.uniform([[1.0], [3.0]], [[0.0], [0.0]], FIRST)
    text = w2(a, b, "x").to_csv(tmp_path / "plan.csv")
    assert text.splitlines() == ["src,dst,mass,cost_contrib", "0,0,0.5,0.5", "1,1,0.5,0.5"]
    assert (tmp_path / "plan.csv").read_text() == text
