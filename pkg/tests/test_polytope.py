"""Envelope construction tests.

The stored-energy recursion in ``simulate_soc`` is the independent oracle:
a plan is physically feasible iff the simulated level stays inside the
battery's limits while connected and at or above the departure target from
departure onward.  Expected envelope rows below were evaluated by hand from
the block formulas before the implementation existed.
"""

from __future__ import annotations

import itertools

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from fleetflex.polytope import (
    FEAS_TOL,
    ConstraintMatrix,
    DecayAdjustmentWarning,
    EnvelopeVector,
    EvSessionParams,
    FleetParams,
    TimeGrid,
    UnreachableTargetWarning,
    aggregate,
    block_slice,
    build_A,
    build_b_battery,
    build_b_ev,
    build_gamma,
    check_feasible,
    max_reachable_energy,
    row_block_name,
    simulate_soc,
)

from fleet_cases import IDEAL, hourly_grid, oracle_feasible, profile_grid, random_ev


# ---------------------------------------------------------------------------
# decay kernel


def test_gamma_alpha_one_is_lower_triangle_of_ones():
    assert_array_equal(build_gamma(1.0, 3), np.tril(np.ones((3, 3))))


def test_gamma_half_hand_values():
    expected = np.array([[1.0, 0.0, 0.0], [0.5, 1.0, 0.0], [0.25, 0.5, 1.0]])
    assert_array_equal(build_gamma(0.5, 3), expected)


def test_gamma_single_slot():
    assert_array_equal(build_gamma(0.9, 1), np.array([[1.0]]))


@pytest.mark.parametrize("alpha", [0.0, -0.1, 1.2])
def test_gamma_rejects_bad_alpha(alpha):
    with pytest.raises(ValueError):
        build_gamma(alpha, 4)


def test_gamma_rejects_bad_T():
    with pytest.raises(ValueError):
        build_gamma(0.5, 0)


def test_gamma_diagonal_is_ones_property():
    rng = np.random.default_rng(7)
    for _ in range(20):
        alpha = float(rng.uniform(0.05, 1.0))
        T = int(rng.integers(1, 12))
        g = build_gamma(alpha, T)
        assert_array_equal(np.diag(g), np.ones(T))
        assert_array_equal(np.triu(g, 1), np.zeros((T, T)))


# ---------------------------------------------------------------------------
# constraint matrix


def test_A_unit_case_exact():
    A = build_A(IDEAL, hourly_grid(1))
    expected = np.array([
        [1.0, 0.0],
        [-1.0, 0.0],
        [0.0, 1.0],
        [0.0, -1.0],
        [1.0, 1.0],
        [-1.0, -1.0],
    ])
    assert_array_equal(A.data, expected)


def test_A_energy_rows_scale_with_eta_in():
    fleet = FleetParams(alpha=1.0, eta_in=0.9, eta_out=1.0)
    grid = TimeGrid(T=2, delta_t=0.25)
    A = build_A(fleet, grid)
    soc_upper = A.block("soc_upper")
    assert_allclose(soc_upper[:, :2], 0.225 * build_gamma(1.0, 2))
    assert_allclose(soc_upper[:, 2:], 0.25 * build_gamma(1.0, 2))


def test_A_shape_property():
    rng = np.random.default_rng(8)
    for _ in range(10):
        T = int(rng.integers(1, 20))
        grid = TimeGrid(T=T, delta_t=float(rng.uniform(0.05, 2.0)))
        fleet = FleetParams(
            alpha=float(rng.uniform(0.5, 1.0)),
            eta_in=float(rng.uniform(0.5, 1.0)),
            eta_out=float(rng.uniform(0.5, 1.0)),
        )
        A = build_A(fleet, grid)
        assert A.rows == 6 * T
        assert A.cols == 2 * T


# ---------------------------------------------------------------------------
# stationary battery right-hand side


def test_b_battery_full_battery_has_no_headroom():
    env = build_b_battery(20.0, 20.0, 0.0, 7.0, -7.0, IDEAL, hourly_grid(3))
    assert_array_equal(env.c_max_block, np.zeros(3))


def test_b_battery_hand_values_alpha_one():
    env = build_b_battery(10.0, 20.0, 0.0, 7.0, 0.0, IDEAL, hourly_grid(2))
    assert_array_equal(env.c_max_block, [10.0, 10.0])
    assert_array_equal(env.c_min_block, [10.0, 10.0])


def test_b_battery_hand_values_alpha_half():
    fleet = FleetParams(alpha=0.5, eta_in=1.0, eta_out=1.0)
    env = build_b_battery(10.0, 20.0, 0.0, 7.0, 0.0, fleet, hourly_grid(2))
    assert_array_equal(env.c_max_block, [15.0, 17.5])
    assert_array_equal(env.c_min_block, [5.0, 2.5])


def test_b_battery_rejects_bad_initial_level():
    with pytest.raises(ValueError):
        build_b_battery(25.0, 20.0, 0.0, 7.0, 0.0, IDEAL, hourly_grid(2))


# ---------------------------------------------------------------------------
# EV right-hand side


def test_b_ev_hand_example():
    ev = EvSessionParams(t_arr=0, t_dep=2, p_max=7.0, p_min=0.0, c_max=20.0, c_min=0.0, c_arr=4.0, c_dep=9.0)
    env = build_b_ev(ev, IDEAL, hourly_grid(4))
    assert_array_equal(env.c_max_block, [16.0, 16.0, 16.0, 16.0])
    assert_array_equal(env.c_min_block, [4.0, -5.0, -5.0, -5.0])


def test_b_ev_power_rows_follow_window():
    ev = EvSessionParams(t_arr=2, t_dep=4, p_max=7.0, p_min=-3.0, c_max=20.0, c_min=0.0, c_arr=4.0, c_dep=4.0)
    env = build_b_ev(ev, IDEAL, hourly_grid(4))
    assert_array_equal(env.p_max_block, [0.0, 0.0, 7.0, 7.0])
    assert_array_equal(env.neg_p_min_block, [0.0, 0.0, 3.0, 3.0])


def test_b_ev_capacity_rows_zero_before_arrival():
    ev = EvSessionParams(t_arr=2, t_dep=4, p_max=7.0, p_min=0.0, c_max=20.0, c_min=1.0, c_arr=4.0, c_dep=6.0)
    env = build_b_ev(ev, IDEAL, hourly_grid(5))
    assert_array_equal(env.c_max_block[:2], [0.0, 0.0])
    assert_array_equal(env.c_min_block[:2], [0.0, 0.0])
    assert_array_equal(env.c_max_block[2:], [16.0, 16.0, 16.0])
    # rows at and after departure carry the target, the row before releases to c_min
    assert_array_equal(env.c_min_block[2:], [3.0, -2.0, -2.0])


def test_b_ev_rejects_empty_window():
    with pytest.raises(ValueError):
        EvSessionParams(t_arr=3, t_dep=3, p_max=7.0, p_min=0.0, c_max=20.0, c_min=0.0, c_arr=4.0, c_dep=4.0)


def test_b_ev_rejects_departure_past_horizon():
    ev = EvSessionParams(t_arr=0, t_dep=5, p_max=7.0, p_min=0.0, c_max=20.0, c_min=0.0, c_arr=4.0, c_dep=4.0)
    with pytest.raises(ValueError):
        build_b_ev(ev, IDEAL, hourly_grid(4))


def test_b_ev_clamps_unreachable_target():
    # one hour at 7 kW from 4 kWh can only reach 11 kWh
    ev = EvSessionParams(t_arr=0, t_dep=1, p_max=7.0, p_min=0.0, c_max=20.0, c_min=0.0, c_arr=4.0, c_dep=18.0)
    assert max_reachable_energy(ev, IDEAL, hourly_grid(2)) == 11.0
    with pytest.warns(UnreachableTargetWarning):
        env = build_b_ev(ev, IDEAL, hourly_grid(2))
    assert_array_equal(env.c_min_block, [4.0 - 11.0, 4.0 - 11.0])
    # full-rate charging is feasible against the clamped envelope
    A = build_A(IDEAL, hourly_grid(2))
    report = check_feasible(A, env, np.array([7.0, 0.0, 0.0, 0.0]))
    assert report.feasible


def test_b_ev_decay_keeps_departure_rows_satisfiable():
    fleet = FleetParams(alpha=0.9, eta_in=1.0, eta_out=1.0)
    grid = hourly_grid(4)
    ev = EvSessionParams(t_arr=0, t_dep=2, p_max=7.0, p_min=0.0, c_max=20.0, c_min=0.0, c_arr=4.0, c_dep=9.0)
    with pytest.warns(DecayAdjustmentWarning):
        env = build_b_ev(ev, fleet, grid)
    dep_row = 0.81 * 4.0 - 9.0
    assert_allclose(env.c_min_block, [0.9 * 4.0, dep_row, 0.9 * dep_row, 0.81 * dep_row])
    # a plan that exactly hits c_dep at departure stays feasible forever after
    need = (9.0 - 0.81 * 4.0) / 0.9  # charge in slot 0 so decay lands on target
    p = np.array([need, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    A = build_A(fleet, grid)
    report = check_feasible(A, env, p)
    assert report.feasible
    assert simulate_soc(ev, fleet, grid, p[:4], p[4:])[1] == pytest.approx(9.0)


@pytest.mark.filterwarnings("ignore::fleetflex.polytope.UnreachableTargetWarning")
def test_window_growth_only_widens_power_rows():
    rng = np.random.default_rng(11)
    for _ in range(30):
        T = int(rng.integers(2, 8))
        grid = hourly_grid(T)
        ev = random_ev(rng, T)
        wide = EvSessionParams(
            t_arr=max(0, ev.t_arr - int(rng.integers(0, ev.t_arr + 1))),
            t_dep=min(T, ev.t_dep + int(rng.integers(0, T - ev.t_dep + 1))),
            p_max=ev.p_max,
            p_min=ev.p_min,
            c_max=ev.c_max,
            c_min=ev.c_min,
            c_arr=ev.c_arr,
            c_dep=ev.c_dep,
        )
        narrow_env = build_b_ev(ev, IDEAL, grid)
        wide_env = build_b_ev(wide, IDEAL, grid)
        assert np.all(wide_env.p_max_block >= narrow_env.p_max_block)
        assert np.all(wide_env.neg_p_min_block >= narrow_env.neg_p_min_block)


# ---------------------------------------------------------------------------
# aggregation


def test_aggregate_single_is_identity():
    ev = EvSessionParams(0, 2, 7.0, -7.0, 20.0, 0.0, 4.0, 9.0)
    env = build_b_ev(ev, IDEAL, hourly_grid(4))
    assert_array_equal(aggregate([env]).to_b(), env.to_b())


def test_aggregate_two_identical_doubles_rows():
    ev = EvSessionParams(0, 2, 7.0, -7.0, 20.0, 0.0, 4.0, 9.0)
    env = build_b_ev(ev, IDEAL, hourly_grid(4))
    assert_array_equal(aggregate([env, env]).to_b(), 2.0 * env.to_b())


def test_aggregate_three_hand_built():
    grid = hourly_grid(3)
    evs = [
        EvSessionParams(0, 1, 3.0, 0.0, 10.0, 0.0, 2.0, 4.0),
        EvSessionParams(1, 3, 5.0, -5.0, 30.0, 0.0, 12.0, 20.0),
        EvSessionParams(0, 3, 7.0, -2.0, 20.0, 1.0, 5.0, 11.0),
    ]
    envs = [build_b_ev(ev, IDEAL, grid) for ev in evs]
    agg = aggregate(envs)
    total = envs[0].to_b()
    total = total + envs[1].to_b()
    total = total + envs[2].to_b()
    assert_array_equal(agg.to_b(), total)


def test_aggregate_rejects_mixed_grids():
    a = EnvelopeVector.zeros(hourly_grid(3), IDEAL)
    b = EnvelopeVector.zeros(hourly_grid(4), IDEAL)
    with pytest.raises(ValueError):
        aggregate([a, b])


def test_aggregate_rejects_mixed_fleets():
    a = EnvelopeVector.zeros(hourly_grid(3), IDEAL)
    b = EnvelopeVector.zeros(hourly_grid(3), FleetParams(alpha=0.9))
    with pytest.raises(ValueError):
        aggregate([a, b])


def test_aggregate_concat_matches_partials_bitwise_on_exact_data():
    # quarter-kWh values are exactly representable, so addition commutes
    rng = np.random.default_rng(13)
    grid = hourly_grid(4)
    envs = []
    for _ in range(8):
        vals = rng.integers(0, 64, size=(4, 4)) / 4.0
        envs.append(EnvelopeVector(vals[0], vals[1], vals[2], vals[3], grid, IDEAL))
    whole = aggregate(envs)
    parts = aggregate([aggregate(envs[:3]), aggregate(envs[3:])])
    assert_array_equal(whole.to_b(), parts.to_b())


def test_aggregate_concat_matches_partials_to_tolerance_on_general_data():
    rng = np.random.default_rng(14)
    grid = hourly_grid(5)
    envs = []
    for _ in range(10):
        vals = rng.uniform(0.0, 30.0, size=(4, 5))
        envs.append(EnvelopeVector(vals[0], vals[1], vals[2] - 10.0, vals[3] - 10.0, grid, IDEAL))
    whole = aggregate(envs)
    parts = aggregate([aggregate(envs[:4]), aggregate(envs[4:])])
    assert_allclose(whole.to_b(), parts.to_b(), rtol=1e-13)


# ---------------------------------------------------------------------------
# stored-energy oracle


def test_soc_zero_power_decays_from_arrival():
    ev = EvSessionParams(1, 3, 7.0, 0.0, 20.0, 0.0, 8.0, 0.0)
    fleet = FleetParams(alpha=0.5, eta_in=1.0, eta_out=1.0)
    soc = simulate_soc(ev, fleet, hourly_grid(4), np.zeros(4), np.zeros(4))
    assert_array_equal(soc, [8.0, 4.0, 2.0, 1.0])


def test_soc_single_charge_step():
    ev = EvSessionParams(0, 2, 7.0, 0.0, 20.0, 0.0, 0.0, 0.0)
    soc = simulate_soc(ev, IDEAL, hourly_grid(2), np.array([5.0, 0.0]), np.zeros(2))
    assert_array_equal(soc, [5.0, 5.0])


def test_soc_hand_recursion_with_losses():
    ev = EvSessionParams(0, 2, 10.0, 0.0, 50.0, 0.0, 10.0, 10.0)
    fleet = FleetParams(alpha=0.9, eta_in=0.9, eta_out=1.0)
    grid = TimeGrid(T=2, delta_t=0.25)
    soc = simulate_soc(ev, fleet, grid, np.array([10.0, 10.0]), np.zeros(2))
    assert_allclose(soc, [11.25, 12.375])


def test_soc_ignores_power_outside_window():
    ev = EvSessionParams(1, 2, 7.0, -7.0, 20.0, 0.0, 8.0, 8.0)
    soc = simulate_soc(ev, IDEAL, hourly_grid(3), np.full(3, 7.0), np.zeros(3))
    assert_array_equal(soc, [8.0, 15.0, 15.0])


# ---------------------------------------------------------------------------
# feasibility reports


def test_zero_plan_feasible_when_target_already_met():
    ev = EvSessionParams(0, 2, 7.0, -7.0, 20.0, 0.0, 9.0, 9.0)
    grid = hourly_grid(4)
    env = build_b_ev(ev, IDEAL, grid)
    report = check_feasible(build_A(IDEAL, grid), env, np.zeros(8))
    assert report.feasible
    assert report.max_violation <= 0.0


def test_overcharge_flagged_in_first_block():
    ev = EvSessionParams(0, 2, 7.0, -7.0, 20.0, 0.0, 9.0, 9.0)
    grid = hourly_grid(4)
    env = build_b_ev(ev, IDEAL, grid)
    p = np.zeros(8)
    p[1] = 8.0  # above the 7 kW port limit
    report = check_feasible(build_A(IDEAL, grid), env, p)
    assert not report.feasible
    assert row_block_name(report.worst_row, 4) == "p_ch_upper"
    assert report.max_violation == pytest.approx(1.0)


def test_check_feasible_rejects_wrong_length():
    grid = hourly_grid(4)
    env = EnvelopeVector.zeros(grid, IDEAL)
    with pytest.raises(ValueError):
        check_feasible(build_A(IDEAL, grid), env, np.zeros(7))


def test_block_slice_covers_all_rows():
    T = 5
    rows = sorted(itertools.chain.from_iterable(range(6 * T)[block_slice(n, T)] for n in
                  ("p_ch_upper", "p_ch_lower", "p_dis_upper", "p_dis_lower", "soc_upper", "soc_lower")))
    assert rows == list(range(6 * T))


# ---------------------------------------------------------------------------
# oracle equivalence: envelope rows against the simulated trajectory


def test_rows_match_oracle_on_exhaustive_power_grids():
    rng = np.random.default_rng(21)
    for _ in range(25):
        T = int(rng.integers(2, 6))
        grid = hourly_grid(T)
        ev = random_ev(rng, T)
        reachable = max_reachable_energy(ev, IDEAL, grid)
        if ev.c_dep > reachable:
            ev = EvSessionParams(ev.t_arr, ev.t_dep, ev.p_max, ev.p_min, ev.c_max, ev.c_min, ev.c_arr, reachable)
        A = build_A(IDEAL, grid)
        env = build_b_ev(ev, IDEAL, grid)
        b = env.to_b()
        plans = profile_grid(ev, T)
        resid = plans @ A.data.T - b
        row_feas = resid.max(axis=1) <= FEAS_TOL
        for k in range(plans.shape[0]):
            expect = oracle_feasible(ev, IDEAL, grid, plans[k, :T], plans[k, T:], FEAS_TOL)
            assert row_feas[k] == expect, (
                f"disagreement: ev={ev}, plan={plans[k]}, rows say {row_feas[k]}, oracle says {expect}"
            )


@pytest.mark.filterwarnings("ignore::fleetflex.polytope.UnreachableTargetWarning")
def test_simulated_feasible_point_passes_rows():
    rng = np.random.default_rng(22)
    hits = 0
    for _ in range(200):
        T = int(rng.integers(2, 8))
        grid = hourly_grid(T)
        ev = random_ev(rng, T)
        p_ch = rng.uniform(0.0, ev.p_max, size=T)
        p_dis = rng.uniform(ev.p_min, 0.0, size=T)
        mask = np.zeros(T, dtype=bool)
        mask[ev.t_arr : ev.t_dep] = True
        p_ch = np.where(mask, p_ch, 0.0)
        p_dis = np.where(mask, p_dis, 0.0)
        if not oracle_feasible(ev, IDEAL, grid, p_ch, p_dis, 0.0):
            continue
        hits += 1
        env = build_b_ev(ev, IDEAL, grid)
        report = check_feasible(build_A(IDEAL, grid), env, np.concatenate([p_ch, p_dis]))
        assert report.feasible
    assert hits > 20  # the sampler must actually exercise the oracle


# ---------------------------------------------------------------------------
# serialization


def test_envelope_csv_roundtrip(tmp_path):
    ev = EvSessionParams(1, 3, 7.3, -2.1, 21.7, 0.5, 4.2, 9.9)
    env = build_b_ev(ev, IDEAL, hourly_grid(4))
    path = tmp_path / "env.csv"
    env.to_csv(path)
    back = EnvelopeVector.from_csv(path, hourly_grid(4), IDEAL)
    assert_array_equal(back.to_b(), env.to_b())


def test_envelope_csv_rejects_wrong_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("slot,p_max,neg_p_min\n0,1,1\n")
    with pytest.raises(ValueError):
        EnvelopeVector.from_csv(path)


def test_envelope_json_roundtrip(tmp_path):
    fleet = FleetParams(alpha=0.95, eta_in=0.9, eta_out=0.85)
    grid = TimeGrid(T=4, delta_t=0.25)
    ev = EvSessionParams(0, 3, 7.3, -2.1, 21.7, 0.5, 4.2, 6.1)
    with pytest.warns(DecayAdjustmentWarning):
        env = build_b_ev(ev, fleet, grid)
    path = tmp_path / "env.json"
    env.write_json(path)
    back = EnvelopeVector.read_json(path)
    assert back.grid == grid
    assert back.fleet == fleet
    assert_array_equal(back.to_b(), env.to_b())


def test_envelope_csv_bytes_deterministic(tmp_path):
    ev = EvSessionParams(0, 2, 7.0 / 3.0, -1.0 / 3.0, 20.0, 0.0, 4.0, 5.0)
    env = build_b_ev(ev, IDEAL, hourly_grid(4))
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    env.to_csv(p1)
    env.to_csv(p2)
    assert p1.read_bytes() == p2.read_bytes()
    back = EnvelopeVector.from_csv(p1, hourly_grid(4), IDEAL)
    assert_array_equal(back.to_b(), env.to_b())  # repr round-trips exactly


def test_matrix_and_envelope_are_immutable():
    grid = hourly_grid(3)
    A = build_A(IDEAL, grid)
    env = EnvelopeVector.zeros(grid, IDEAL)
    with pytest.raises(ValueError):
        A.data[0, 0] = 5.0
    with pytest.raises(ValueError):
        env.p_max_block[0] = 5.0
    assert isinstance(A, ConstraintMatrix)
