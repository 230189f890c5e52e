import math

import numpy as np
import pytest

from cskuramoto.ensemble import (AtomicMeasure, Representation, RepresentationError, disintegrate, load_csv,
                                 load_jsonl, load_measure, moments, natural_velocities, save_csv, save_jsonl,
                                 to_second_order, velocity_field)
from cskuramoto.kernel import KernelParams

H = KernelParams(0.5)
FIRST, SECOND = Representation.FIRST_ORDER, Representation.SECOND_ORDER


def random_measure(rng, n, d, rep=SECOND, uniform=False):
    w = np.full(n, 1.0 / n) if uniform else rng.uniform(0.5, 2.0, n)
    return AtomicMeasure(rng.normal(size=(n, d)), rng.normal(size=(n, d)), w / math.fsum(w), rep)


def test_measure_validation():
    with pytest.raises(ValueError):
        AtomicMeasure(np.zeros((2, 1)), np.zeros((2, 1)), [0.5, 0.4], FIRST)
    with pytest.raises(ValueError):
        AtomicMeasure(np.zeros((2, 1)), np.zeros((2, 1)), [1.5, -0.5], FIRST)
    with pytest.raises(ValueError):
        AtomicMeasure(np.zeros((2, 1)), np.zeros((2, 2)), [0.5, 0.5], FIRST)
    with pytest.raises(ValueError):
        AtomicMeasure(np.zeros((0, 1)), np.zeros((0, 1)), [], FIRST)
    with pytest.raises(ValueError):
        AtomicMeasure([[math.nan]], [[0.0]], [1.0], FIRST)
    m = AtomicMeasure.uniform(np.zeros(3), np.ones(3), "first_order")
    assert m.dim == 1 and m.n == 3 and m.is_first_order
    with pytest.raises(ValueError):
        m.x[0, 0] = 1.0


def test_natural_velocities_examples():
    m = natural_velocities(AtomicMeasure.uniform([[0.3, -1.0]], [[2.0, 5.0]], SECOND), H)
    np.testing.assert_array_equal(m.y, [[2.0, 5.0]])
    m = natural_velocities(AtomicMeasure.uniform([[0.0], [1.0]], [[0.0], [0.0]], SECOND), H)
    np.testing.assert_allclose(m.y, [[-1.0], [1.0]], rtol=1e-15)
    assert m.is_first_order
    with pytest.raises(RepresentationError):
        natural_velocities(m, H)


def test_to_second_order_examples():
    f = to_second_order(AtomicMeasure.uniform([[0.0], [1.0]], [[-1.0], [1.0]], FIRST), H)
    np.testing.assert_allclose(f.y, [[0.0], [0.0]], atol=1e-15)
    single = to_second_order(AtomicMeasure.uniform([[4.0]], [[0.7]], FIRST), H)
    assert single.y[0, 0] == 0.7
    with pytest.raises(RepresentationError):
        to_second_order(f, H)


@pytest.mark.parametrize("eps", [0.0, 1e-2])
@pytest.mark.parametrize("d", [1, 2, 3])
def test_transform_round_trips(d, eps):
    rng = np.random.default_rng(d)
    p = KernelParams(0.75, eps)
    f = random_measure(rng, 40, d)
    back = to_second_order(natural_velocities(f, p), p)
    assert back.same_atoms(f, tol=1e-12)
    mu = random_measure(rng, 40, d, FIRST)
    assert natural_velocities(to_second_order(mu, p), p).same_atoms(mu, tol=1e-12)
    # the position marginal never moves
    assert np.array_equal(natural_velocities(f, p).x, f.x)
    assert np.array_equal(natural_velocities(f, p).w, f.w)


def test_velocity_field_examples():
    point = AtomicMeasure.uniform([[0.0]], [[0.0]], FIRST)
    assert velocity_field(point, [0.0], [0.0], H)[0, 0] == 0.0
    assert velocity_field(point, [1.0], [0.0], H)[0, 0] == pytest.approx(-2.0, rel=1e-15)
    pair = AtomicMeasure.uniform([[-1.0], [1.0]], [[0.0], [0.0]], FIRST)
    assert velocity_field(pair, [0.0], [0.4], H)[0, 0] == 0.4


def test_field_one_sided_lipschitz_and_growth():
    rng = np.random.default_rng(11)
    for d in (1, 2):
        m = random_measure(rng, 30, d, FIRST)
        q = rng.normal(scale=3.0, size=(10000, 2 * d))
        r = rng.normal(scale=3.0, size=(10000, 2 * d))
        uq = velocity_field(m, q[:, :d], q[:, d:], H)
        ur = velocity_field(m, r[:, :d], r[:, d:], H)
        lhs = np.einsum("ij,ij->i", uq - ur, q[:, :d] - r[:, :d])
        assert np.all(lhs <= 0.5 * np.einsum("ij,ij->i", q - r, q - r) + 1e-9)
        moment = float(m.w @ np.linalg.norm(m.x, axis=1) ** 0.5)
        bound = (moment + np.linalg.norm(q[:, :d], axis=1) ** 0.5) / 0.5 + np.linalg.norm(q[:, d:], axis=1)
        assert np.all(np.linalg.norm(uq, axis=1) <= bound + 1e-12)


def test_disintegrate_examples():
    one = AtomicMeasure.uniform(np.arange(3.0), np.full(3, 2.0), FIRST)
    dis = disintegrate(one)
    assert len(dis.fibers) == 1 and dis.fibers[0].nu_weight == 1.0
    m = AtomicMeasure.uniform([[0.0], [1.0], [2.0], [3.0]], [[1.0], [1.0], [-1.0], [-1.0]], FIRST)
    dis = disintegrate(m)
    assert [f.nu_weight for f in dis.fibers] == [0.5, 0.5]
    for f in dis.fibers:
        np.testing.assert_array_equal(f.weights, [0.5, 0.5])
    np.testing.assert_array_equal(dis.omegas, [[1.0], [-1.0]])
    assert dis.reassemble().same_atoms(m)


def test_disintegrate_tolerance_and_signed_zero():
    m = AtomicMeasure.uniform([[0.0], [1.0], [2.0]], [[0.0], [-0.0], [1e-9]], FIRST)
    assert len(disintegrate(m).fibers) == 2
    assert len(disintegrate(m, omega_tol=1e-8).fibers) == 1
    with pytest.raises(ValueError):
        disintegrate(m, omega_tol=-1.0)


def test_disintegration_reassembly_is_lossless():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(50, 2))
    y = rng.integers(0, 5, size=(50, 2)).astype(float)
    w = rng.uniform(0.1, 1.0, 50)
    m = AtomicMeasure(x, y, w / math.fsum(w), FIRST)
    dis = disintegrate(m)
    assert math.fsum(dis.nu_weights) == pytest.approx(1.0, abs=1e-15)
    for f in dis.fibers:
        assert math.fsum(f.weights) == pytest.approx(1.0, abs=1e-15)
    assert dis.reassemble().same_atoms(m, tol=1e-15)


def test_moments_examples():
    g = moments(AtomicMeasure.uniform([[1.0, 2.0]], [[3.0, 4.0]], FIRST))
    assert g.diam_x == 0.0 and g.diam_omega == 0.0
    np.testing.assert_array_equal(g.mean_x, [1.0, 2.0])
    g = moments(AtomicMeasure.uniform([[0.0], [2.0]], [[0.0], [0.0]], FIRST))
    assert (g.diam_x, g.mean_x[0], g.second_moment_x) == (2.0, 1.0, 2.0)
    g = moments(AtomicMeasure([[-1.0], [1.0]], [[0.0], [0.0]], [0.25, 0.75], FIRST))
    assert g.mean_x[0] == 0.5


def test_diameter_matches_brute_force():
    rng = np.random.default_rng(8)
    pts = rng.normal(size=(60, 3))
    brute = max(np.linalg.norm(a - b) for a in pts for b in pts)
    assert moments(AtomicMeasure.uniform(pts, pts, FIRST)).diam_x == pytest.approx(brute, rel=1e-14)


@pytest.mark.parametrize("suffix", [".csv", ".jsonl"])
def test_io_round_trip(tmp_path, suffix):
    m = random_measure(np.random.default_rng(3), 17, 2)
    path = tmp_path / f"m{suffix}"
    (save_csv if suffix == ".csv" else save_jsonl)(m, path)
    back = load_measure(path)
    assert back.same_atoms(m, tol=1e-15)
    assert back.representation is m.representation


def test_loaders_reject_bad_weights(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("dim,representation\n1,first_order\n0.5,0.0,1.0\n0.4,1.0,2.0\n")
    with pytest.raises(ValueError):
        load_csv(p)
    p.write_text("x,y\n1,first_order\n")
    with pytest.raises(ValueError):
        load_csv(p)
    q = tmp_path / "bad.jsonl"
    q.write_text('{"dim": 1, "representation": "second_order"}\n{"w": 0.7, "x": [0], "y": [0]}\n')
    with pytest.raises(ValueError):
        load_jsonl(q)


def test_loader_renormalizes_rounding(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("dim,representation\n1,first_order\n0.3333333333,0,1\n0.3333333333,1,2\n0.3333333333,2,3\n")
    m = load_csv(p)
    assert math.fsum(m.w) == pytest.approx(1.0, abs=1e-15)
