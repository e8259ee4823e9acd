import numpy as np
import pytest

from dsuedhi import dnl
from dsuedhi import network as nw
from oracles import (
    diverge_comparison,
    fine_single_link_oracle,
    merge_comparison,
    overloaded_link_comparison,
    partially_full_supply_comparison,
)


def single_link_net(length=2400.0, speed=20.0, cap=0.25, jam=0.2, demand=600.0):
    link = nw.Link("1", "A", "B", length, speed, 5.0, cap, jam)
    net = nw.validate_network([link], [nw.OdDemand("A", "B", demand, 0, 0.0)])
    return net, nw.build_path_set(net)


class TestLoadBasics:
    def test_free_flow_single_unit(self):
        # 1000 m at 1000/60 m/s is a 60 s traversal
        net, ps = single_link_net(length=1000.0, speed=1000.0 / 60.0, cap=0.5, demand=1.0)
        grid = nw.TimeGrid(1200.0, 120.0)
        h = np.zeros((1, 10))
        h[0, 0] = 1.0
        res = dnl.load(net, ps, grid, h)
        assert res.path_time[0, 0] == pytest.approx(60.0, abs=1e-9)

    def test_zero_departures_free_flow_everywhere(self, grid_congested):
        net, ps, grid, _ = grid_congested
        res = dnl.load(net, ps, grid, np.zeros((ps.n_paths, grid.n_intervals)))
        assert np.abs(res.path_time - ps.free_flow_s[:, None]).max() <= 1e-9
        assert np.abs(res.instant_path_time - ps.free_flow_s[:, None]).max() <= 1e-9

    def test_departure_in_last_interval_empty_network(self):
        net, ps = single_link_net(demand=1.0)
        grid = nw.TimeGrid(1200.0, 120.0)
        h = np.zeros((1, 10))
        h[0, 9] = 1.0
        res = dnl.load(net, ps, grid, h)
        assert res.path_time[0, 9] == pytest.approx(ps.free_flow_s[0], abs=1e-9)
        assert not res.extrapolated.any()

    def test_identical_inputs_bit_identical(self, grid_congested):
        net, ps, grid, _ = grid_congested
        rng = np.random.default_rng(7)
        h = rng.uniform(0, 3, size=(ps.n_paths, grid.n_intervals))
        a = dnl.load(net, ps, grid, h)
        b = dnl.load(net, ps, grid, h)
        assert np.array_equal(a.path_time, b.path_time)
        assert np.array_equal(a.n_dn, b.n_dn)

    def test_rejects_bad_shape_and_negatives(self):
        net, ps = single_link_net()
        grid = nw.TimeGrid(1200.0, 120.0)
        with pytest.raises(dnl.DnlError):
            dnl.load(net, ps, grid, np.zeros((2, 10)))
        h = np.zeros((1, 10))
        h[0, 0] = -1.0
        with pytest.raises(dnl.DnlError):
            dnl.load(net, ps, grid, h)


class TestDemandSupplyRules:
    def test_backlog_rate_below_capacity(self):
        # 10 vehicles ready, two-minute step, half-vehicle-per-second capacity
        assert dnl.link_demand_rate(10.0, 0.0, 0.0, 0.5, 120.0) == pytest.approx(10.0 / 120.0)

    def test_no_backlog_no_arrivals(self):
        assert dnl.link_demand_rate(5.0, 5.0, 0.0, 0.5, 120.0) == 0.0

    def test_backlog_capped_at_capacity(self):
        assert dnl.link_demand_rate(1000.0, 0.0, 0.0, 0.5, 120.0) == 0.5

    def test_supply_empty_link(self):
        assert dnl.link_supply_rate(0.0, 0.0, 480.0, 0.5, 120.0) == 0.5

    def test_supply_jammed_link(self):
        assert dnl.link_supply_rate(0.0, 480.0, 480.0, 0.5, 120.0) == 0.0

    def test_supply_floor_at_zero(self):
        assert dnl.link_supply_rate(0.0, 500.0, 480.0, 0.5, 120.0) == 0.0


class TestNodeFlux:
    def test_single_movement_passes_demand(self):
        flows = dnl.node_flux({("a", "b"): 0.1}, {"b": 0.5})
        assert flows[("a", "b")] == pytest.approx(0.1)

    def test_merge_splits_supply_by_demand(self):
        flows = dnl.node_flux({("a", "m"): 0.3, ("b", "m"): 0.1}, {"m": 0.2})
        assert flows[("a", "m")] == pytest.approx(0.15)
        assert flows[("b", "m")] == pytest.approx(0.05)

    def test_blocked_branch_stalls_whole_link(self):
        flows = dnl.node_flux(
            {("a", "x"): 0.2, ("a", "y"): 0.3}, {"x": 0.0, "y": 10.0}
        )
        assert flows[("a", "x")] == 0.0
        assert flows[("a", "y")] == 0.0

    def test_no_movement_exceeds_demand(self):
        demand = {("a", "m"): 0.3, ("b", "m"): 0.1}
        flows = dnl.node_flux(demand, {"m": 100.0})
        for k, v in flows.items():
            assert v <= demand[k] + 1e-15


class TestRefinedOracle:
    def test_overloaded_link_matches_fine_integration(self):
        for t, (got, want) in enumerate(overloaded_link_comparison()):
            assert got == pytest.approx(want, rel=0.02), f"interval {t}: {got} vs {want}"

    def test_merge_matches_fine_integration(self):
        for t, (got, want) in enumerate(merge_comparison()):
            assert got == pytest.approx(want, rel=0.02), f"interval {t}: {got} vs {want}"

    def test_diverge_matches_fine_integration(self):
        for t, (got, want) in enumerate(diverge_comparison()):
            assert got == pytest.approx(want, rel=0.02), f"interval {t}: {got} vs {want}"

    def test_partially_full_supply_matches_refined_curves(self):
        pairs = partially_full_supply_comparison()
        assert any(got < 0.4 for got, _ in pairs)  # the storage term binds
        for t, (got, want) in enumerate(pairs):
            assert got == pytest.approx(want, rel=0.02), f"probe {t}: {got} vs {want}"


class TestPathTravelTime:
    def test_uncongested_two_link_sum(self):
        links = [
            nw.Link("a", "A", "B", 1800, 10, 5, 1, 0.1),  # 180 s
            nw.Link("b", "B", "C", 2400, 10, 5, 1, 0.1),  # 240 s
        ]
        net = nw.validate_network(links, [nw.OdDemand("A", "C", 1, 0, 0.0)])
        ps = nw.build_path_set(net)
        grid = nw.TimeGrid(1200.0, 60.0)
        h = np.zeros((1, 20))
        h[0, 0] = 1.0
        res = dnl.load(net, ps, grid, h)
        assert dnl.path_travel_time(res, 0, 0) == pytest.approx(420.0, abs=1e-9)

    def test_congested_equals_curve_inversion(self):
        cap = 0.25
        net, ps = single_link_net(cap=cap)
        grid = nw.TimeGrid(4800.0, 120.0)
        cols = np.zeros(40)
        cols[:10] = 2 * cap * 120.0
        res = dnl.load(net, ps, grid, cols[None, :])
        oracle_tt = fine_single_link_oracle(cols, 120.0, 2400.0, 20.0, cap)
        mid = grid.interval_mids()[5]
        assert res.path_time[0, 5] == pytest.approx(oracle_tt(mid), rel=0.02)


class TestInstantaneousTimes:
    def test_sum_of_current_link_times(self):
        links = [
            nw.Link("a", "A", "B", 1800, 10, 5, 1, 0.1),
            nw.Link("b", "B", "C", 2400, 10, 5, 1, 0.1),
        ]
        net = nw.validate_network(links, [nw.OdDemand("A", "C", 1, 0, 0.0)])
        ps = nw.build_path_set(net)
        grid = nw.TimeGrid(1200.0, 60.0)
        res = dnl.load(net, ps, grid, np.zeros((1, 20)))
        phi = dnl.instantaneous_path_times(res, 0)
        assert phi[0] == pytest.approx(res.link_time[0, 0] + res.link_time[1, 0])
        assert phi[0] == pytest.approx(420.0, abs=1e-9)

    def test_empty_network_equals_realized(self):
        net, ps = single_link_net(demand=1.0)
        grid = nw.TimeGrid(1200.0, 120.0)
        res = dnl.load(net, ps, grid, np.zeros((1, 10)))
        np.testing.assert_allclose(res.instant_path_time, res.path_time, atol=1e-9)

    def test_building_congestion_underestimates(self):
        # downstream queue grows after the probe's provision instant
        cap = 0.25
        net, ps = single_link_net(cap=cap)
        grid = nw.TimeGrid(4800.0, 120.0)
        cols = np.zeros(40)
        cols[2:12] = 2 * cap * 120.0
        res = dnl.load(net, ps, grid, cols[None, :])
        t = 4  # congestion still building
        assert res.instant_path_time[0, t] < res.path_time[0, t]


class TestLoadingInvariants:
    def test_conservation(self, grid_congested):
        net, ps, grid, _ = grid_congested
        rng = np.random.default_rng(3)
        h = rng.uniform(0, 4, size=(ps.n_paths, grid.n_intervals))
        res = dnl.load(net, ps, grid, h)
        assert res.drained
        assert res.vehicles_stored() <= 1e-9 * max(1.0, h.sum())
        total_in = res.src_up[:, -1].sum()
        assert total_in == pytest.approx(h.sum(), rel=1e-12)

    def test_cumulative_curves_monotone_and_ordered(self, grid_congested):
        net, ps, grid, _ = grid_congested
        rng = np.random.default_rng(4)
        h = rng.uniform(0, 4, size=(ps.n_paths, grid.n_intervals))
        res = dnl.load(net, ps, grid, h)
        assert np.all(np.diff(res.n_up, axis=1) >= -1e-9)
        assert np.all(np.diff(res.n_dn, axis=1) >= -1e-9)
        assert np.all(res.n_dn <= res.n_up + 1e-9)

    def test_fifo_departure_ordering(self, grid_congested):
        net, ps, grid, _ = grid_congested
        rng = np.random.default_rng(5)
        h = rng.uniform(0, 6, size=(ps.n_paths, grid.n_intervals))
        res = dnl.load(net, ps, grid, h)
        arrive = grid.interval_mids()[None, :] + res.path_time
        assert np.min(np.diff(arrive, axis=1)) >= -grid.dt_s

    def test_free_flow_lower_bound(self, grid_congested):
        net, ps, grid, _ = grid_congested
        rng = np.random.default_rng(6)
        h = rng.uniform(0, 6, size=(ps.n_paths, grid.n_intervals))
        res = dnl.load(net, ps, grid, h)
        assert np.min(res.path_time - ps.free_flow_s[:, None]) >= -1e-6

    def test_causality_future_departures_do_not_change_finished_trips(self):
        cap = 0.25
        net, ps = single_link_net(cap=cap)
        grid = nw.TimeGrid(4800.0, 120.0)
        base = np.zeros((1, 40))
        base[0, :5] = 30.0
        res_a = dnl.load(net, ps, grid, base)
        done_by = 10  # all early trips complete before interval 20
        assert grid.interval_mids()[4] + res_a.path_time[0, 4] < 20 * 120.0
        perturbed = base.copy()
        perturbed[0, 25:30] = 45.0
        res_b = dnl.load(net, ps, grid, perturbed)
        np.testing.assert_allclose(
            res_a.path_time[0, :done_by], res_b.path_time[0, :done_by], atol=1e-9
        )

    def test_continuity_small_input_perturbation(self, grid_congested):
        net, ps, grid, _ = grid_congested
        rng = np.random.default_rng(8)
        h = rng.uniform(0, 5, size=(ps.n_paths, grid.n_intervals))
        res_a = dnl.load(net, ps, grid, h)
        res_b = dnl.load(net, ps, grid, h * (1 + 1e-6))
        delta = np.abs(res_a.path_time - res_b.path_time).max()
        assert delta < 1.0  # seconds, for a relative 1e-6 input change


class TestReportingAndConcurrency:
    def test_simulation_cap_flags_unfinished_trips(self):
        # far too little drain room: late departures cannot exit in-window
        net, ps = single_link_net(cap=0.25)
        grid = nw.TimeGrid(1440.0, 120.0)
        cols = np.zeros(12)
        cols[:10] = 60.0
        res = dnl.load(net, ps, grid, cols[None, :], drain_max_steps=0)
        assert not res.drained
        assert res.extrapolated[0, -1]
        assert res.vehicles_stored() > 1.0
        # extrapolated values keep the free-flow bound and departure order
        assert np.all(res.path_time[0] >= ps.free_flow_s[0] - 1e-9)
        arrive = grid.interval_mids() + res.path_time[0]
        assert np.all(np.diff(arrive) >= -grid.dt_s)

    def test_concurrent_loads_match_sequential(self, grid_congested):
        from concurrent.futures import ThreadPoolExecutor

        net, ps, grid, _ = grid_congested
        rng = np.random.default_rng(13)
        inputs = [rng.uniform(0, 4, size=(ps.n_paths, grid.n_intervals)) for _ in range(4)]
        sequential = [dnl.load(net, ps, grid, h).path_time for h in inputs]
        with ThreadPoolExecutor(max_workers=4) as pool:
            threaded = list(pool.map(lambda h: dnl.load(net, ps, grid, h).path_time, inputs))
        for a, b in zip(sequential, threaded):
            assert np.array_equal(a, b)


class TestWarmStart:
    def test_warm_start_bit_identical(self, grid_congested):
        net, ps, grid, _ = grid_congested
        rng = np.random.default_rng(9)
        h = rng.uniform(0, 4, size=(ps.n_paths, grid.n_intervals))
        base = dnl.load(net, ps, grid, h, keep_state=True)
        modified = h.copy()
        modified[:, 20:] = rng.uniform(0, 4, size=(ps.n_paths, grid.n_intervals - 20))
        cold = dnl.load(net, ps, grid, modified)
        warm = dnl.load(net, ps, grid, modified, warm_start=(base, 20))
        assert np.array_equal(cold.path_time, warm.path_time)
        assert np.array_equal(cold.n_dn, warm.n_dn)


class TestLoadCounter:
    def test_counter_increments(self):
        net, ps = single_link_net(demand=1.0)
        grid = nw.TimeGrid(1200.0, 120.0)
        dnl.reset_load_call_count()
        dnl.load(net, ps, grid, np.zeros((1, 10)))
        dnl.load(net, ps, grid, np.zeros((1, 10)))
        assert dnl.load_call_count() == 2


class TestDepartureMatrix:
    def test_class_tags(self):
        dm = dnl.DepartureMatrix(np.zeros((2, 3)), "total")
        assert dm.kind == "total"
        with pytest.raises(ValueError):
            dnl.DepartureMatrix(np.zeros((2, 3)), "bogus")

    def test_load_accepts_tagged_matrix(self):
        net, ps = single_link_net(demand=1.0)
        grid = nw.TimeGrid(1200.0, 120.0)
        h = np.zeros((1, 10))
        h[0, 0] = 1.0
        tagged = dnl.load(net, ps, grid, dnl.DepartureMatrix(h, "total"))
        plain = dnl.load(net, ps, grid, h)
        assert np.array_equal(tagged.path_time, plain.path_time)

    def test_feasibility_check(self, grid_congested):
        net, ps, grid, _ = grid_congested
        d_i, _ = net.class_demands()
        h = np.zeros((ps.n_paths, grid.n_intervals))
        for od, sl in enumerate(ps.od_slices):
            h[sl.start, 0] = d_i[od]
        dnl.check_feasible(h, ps, d_i)
        with pytest.raises(ValueError):
            dnl.check_feasible(h * 2, ps, d_i)
