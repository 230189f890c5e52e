import json
import math

import numpy as np
import pytest

from cskuramoto.dynamics import (FirstOrderSim, NonConvergenceError, SecondOrderSim, StepControl,
                                 StiffEncounterError, detect_and_merge, find_equilibrium, run, step_first_order,
                                 step_second_order, sticking_time)
from cskuramoto.ensemble import AtomicMeasure, Representation, natural_velocities, omega_key, to_second_order
from cskuramoto.kernel import KernelParams

FIRST, SECOND = Representation.FIRST_ORDER, Representation.SECOND_ORDER
H = KernelParams(0.5)


def pair(alpha_r0=1.0, d=1):
    x = np.zeros((2, d))
    x[1, 0] = alpha_r0
    return AtomicMeasure.uniform(x, np.zeros((2, d)), FIRST)


def test_single_atom_free_stream_is_exact():
    m = AtomicMeasure.uniform([[0.25, -1.0]], [[0.5, 2.0]], FIRST)
    sim = step_first_order(FirstOrderSim(m, H), 2.0)
    np.testing.assert_allclose(sim.x, [[1.25, 3.0]], rtol=1e-14)
    with pytest.raises(ValueError):
        step_first_order(sim, 0.0)


@pytest.mark.parametrize("alpha,t_star", [(0.5, 1.0), (0.25, 3.0)])
def test_symmetric_pair_sticks_at_closed_form_time(alpha, t_star):
    p = KernelParams(alpha)
    assert sticking_time(alpha, 1.0) == pytest.approx(t_star, rel=1e-15)
    traj = run(FirstOrderSim(pair(), p), t_star + 0.5, 0.25)
    assert len(traj.events) == 1
    ev = traj.events[0]
    assert ev.time == pytest.approx(t_star, rel=1e-4)
    assert ev.position[0] == pytest.approx(0.5, abs=1e-9)
    final = traj.snapshots[-1]
    assert final.n == 1 and final.w[0] == 1.0 and final.x[0, 0] == pytest.approx(0.5, abs=1e-9)


def test_sticking_pair_gap_power_is_linear_before_contact():
    alpha = 0.5
    traj = run(FirstOrderSim(pair(), KernelParams(alpha)), 0.9, 0.1)
    t = np.asarray(traj.times)
    gaps = np.array([abs(s.x[1, 0] - s.x[0, 0]) for s in traj.snapshots])
    slope = np.polyfit(t, gaps ** alpha, 1)[0]
    # d/dt r^a = -a (w1 + w2) / (1 - a)
    assert slope == pytest.approx(-alpha / (1 - alpha), rel=1e-6)


def test_distinct_omega_pair_crosses_without_merging():
    m = AtomicMeasure.uniform([[0.0], [1.0]], [[2.0], [-2.0]], FIRST)
    traj = run(FirstOrderSim(m, H), 3.0, 0.5)
    assert not traj.events
    final = traj.snapshots[-1]
    assert final.n == 2 and final.x[0, 0] > final.x[1, 0]


def test_three_collinear_equal_omega_atoms_form_one_cluster():
    m = AtomicMeasure.uniform([[0.0], [0.7], [2.0]], np.zeros((3, 1)), FIRST)
    traj = run(FirstOrderSim(m, H), 10.0, 1.0)
    final = traj.snapshots[-1]
    assert final.n == 1 and final.w[0] == pytest.approx(1.0, abs=1e-15)
    assert sorted(traj.clusters[-1][0]) == [0, 1, 2]
    assert final.x[0, 0] == pytest.approx(0.9, abs=1e-8)
    assert len(traj.events) == 2


def test_merge_only_touches_equal_omega_and_conserves_weight():
    w = np.array([0.1, 0.2, 0.3, 0.4])
    x = np.array([[0.0], [1e-12], [5.0], [5.0 + 1e-12]])
    y = np.array([[1.0], [1.0], [2.0], [3.0]])
    sim = FirstOrderSim(AtomicMeasure(x, y, w, FIRST), H)
    detect_and_merge(sim)
    assert sim.n == 3
    assert sim.clusters == [(0, 1), (2,), (3,)]
    assert math.fsum(sim.w) == 1.0
    assert sim.w[0] == pytest.approx(0.3, abs=1e-16)
    assert sim.x[0, 0] == pytest.approx(2e-13 / 0.3, rel=1e-9)


def test_omega_invariance_and_center_of_mass_law():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (20, 2))
    y = rng.integers(-2, 3, (20, 2)).astype(float)  # repeated omegas so merges can happen
    m = AtomicMeasure.uniform(x, y, FIRST)
    traj = run(FirstOrderSim(m, H), 1.0, 0.1)
    for s, clusters in zip(traj.snapshots, traj.clusters):
        assert sorted(i for c in clusters for i in c) == list(range(20))
        for k, c in enumerate(clusters):
            assert all(omega_key(s.y[k]) == omega_key(y[i]) for i in c)
        drift = s.w @ s.x - m.w @ m.x - traj.times[traj.snapshots.index(s)] * (m.w @ m.y)
        assert np.max(np.abs(drift)) <= 1e-6


def test_step_controls_agree():
    rng = np.random.default_rng(1)
    m = AtomicMeasure.uniform(rng.uniform(-1, 1, (15, 2)), rng.uniform(-1, 1, (15, 2)), FIRST)
    a = FirstOrderSim(m, H, StepControl(rtol=1e-8, atol=1e-11)).advance_to(1.0)
    b = FirstOrderSim(m, H, StepControl(rtol=1e-11, atol=1e-14, h_init=1e-5)).advance_to(1.0)
    assert np.max(np.abs(a.x - b.x)) < 1e-6


def test_stiff_encounter_error_carries_pair():
    m = AtomicMeasure.uniform([[0.0], [1.0]], [[1.0], [-1.0]], FIRST)
    sim = FirstOrderSim(m, KernelParams(0.75), StepControl(rtol=1e-14, atol=1e-16, h_min=1e-3))
    with pytest.raises(StiffEncounterError) as info:
        sim.advance_to(1.0)
    assert info.value.pair == ((0,), (1,))
    assert info.value.h < 1e-3


def test_second_order_rigid_translation_and_momentum():
    p = KernelParams(0.5, 1e-2)
    rng = np.random.default_rng(2)
    x = rng.normal(size=(10, 2))
    f = AtomicMeasure.uniform(x, np.tile([0.3, -0.1], (10, 1)), SECOND)
    sim = step_second_order(SecondOrderSim(f, p), 1.0)
    np.testing.assert_allclose(sim.x, x + [0.3, -0.1], atol=1e-12)
    w = rng.uniform(0.5, 1.5, 10)
    g = AtomicMeasure(x, rng.normal(size=(10, 2)), w / w.sum(), SECOND)
    traj = run(SecondOrderSim(g, p), 2.0, 0.25)
    moms = np.array([s.w @ s.y for s in traj.snapshots])
    assert np.max(np.abs(moms - moms[0])) <= 2e-8
    kin = [float(s.w @ np.einsum("ij,ij->i", s.y, s.y)) for s in traj.snapshots]
    assert all(b <= a + 1e-6 for a, b in zip(kin, kin[1:]))


def test_second_order_requires_mollifier():
    f = AtomicMeasure.uniform([[0.0]], [[0.0]], SECOND)
    with pytest.raises(ValueError):
        SecondOrderSim(f, H)
    with pytest.raises(ValueError):
        FirstOrderSim(f, H)


def test_mollified_second_order_tracks_first_order_before_contact():
    # velocities chosen so both natural velocities vanish: the pair sticks at t = 1
    f = AtomicMeasure.uniform([[0.0], [1.0]], [[1.0], [-1.0]], SECOND)
    m = natural_velocities(f, H)
    assert np.allclose(m.y, 0.0, atol=1e-15)
    ctl = StepControl(rtol=1e-10, atol=1e-13)
    first = run(FirstOrderSim(m, H, ctl), 0.95, 0.05)
    sim = SecondOrderSim(f, KernelParams(0.5, 1e-6), ctl)
    worst = 0.0
    for t, s in zip(first.times, first.snapshots):
        if t > sim.time:
            sim.advance_to(t)
        ref = to_second_order(s, H)
        worst = max(worst, float(np.max(np.abs(np.hstack([sim.x - ref.x, sim.v - ref.y])))))
    assert worst <= 1e-3


def test_equilibrium_of_two_atoms():
    m = AtomicMeasure.uniform([[-2.0], [2.0]], [[-1.0], [1.0]], FIRST)
    eq = find_equilibrium(m, H, tol=1e-12)
    np.testing.assert_allclose(eq.measure.x[:, 0], [-0.5, 0.5], atol=1e-10)
    assert eq.residual < 1e-12 and eq.x_mean_error <= 1e-8
    single = find_equilibrium(AtomicMeasure.uniform([[3.0]], [[0.0]], FIRST), H)
    assert single.measure.x[0, 0] == 3.0 and single.time == 0.0


def test_equilibrium_reports_galilean_frame():
    m = AtomicMeasure.uniform([[-2.0], [2.0]], [[0.0], [2.0]], FIRST)
    eq = find_equilibrium(m, H, tol=1e-12)
    assert eq.frame_velocity[0] == pytest.approx(1.0)
    np.testing.assert_allclose(eq.measure.x[:, 0], [-0.5, 0.5], atol=1e-10)


def test_equilibrium_of_random_ensemble():
    rng = np.random.default_rng(5)
    m = AtomicMeasure.uniform(rng.uniform(-1, 1, (12, 2)), rng.uniform(-0.5, 0.5, (12, 2)), FIRST)
    eq = find_equilibrium(m, H, tol=1e-10)
    assert eq.residual < 1e-10
    np.testing.assert_allclose(eq.measure.w @ eq.measure.x, m.w @ m.x, atol=1e-8)


def test_equilibrium_horizon_exceeded():
    m = AtomicMeasure.uniform([[-50.0], [50.0]], [[-1.0], [1.0]], FIRST)
    with pytest.raises(NonConvergenceError) as info:
        find_equilibrium(m, H, horizon=0.5, polish=False)
    assert info.value.residual > 0


def test_run_sampling_and_jsonl(tmp_path):
    m = pair()
    sim = FirstOrderSim(m, H)
    single = run(sim, 0.0, 0.1)
    assert single.times == [0.0] and len(single.snapshots) == 1
    traj = run(FirstOrderSim(m, H), 1.25, 0.5)
    assert traj.times == [0.0, 0.5, 1.0, 1.25]
    path = tmp_path / "traj.jsonl"
    traj.to_jsonl(path)
    recs = [json.loads(line) for line in path.read_text().splitlines()]
    assert [r["t"] for r in recs] == traj.times
    assert recs[0]["atoms"][1] == {"w": 0.5, "x": [1.0], "y": [0.0]}
    assert sum(len(r["events_since_last"]) for r in recs) == 1
    assert recs[2]["events_since_last"][0]["clusters"] == [[0], [1]]
    with pytest.raises(ValueError):
        run(FirstOrderSim(m, H), 1.0, 0.0)


def test_runs_are_bitwise_reproducible():
    rng = np.random.default_rng(9)
    m = AtomicMeasure.uniform(rng.uniform(-1, 1, (30, 1)), rng.uniform(-1, 1, (30, 1)), FIRST)
    a = run(FirstOrderSim(m, H), 1.0, 0.1)
    b = run(FirstOrderSim(m, H), 1.0, 0.1)
    assert all(np.array_equal(s.x, t.x) for s, t in zip(a.snapshots, b.snapshots))
    assert a.dissipation == b.dissipation
