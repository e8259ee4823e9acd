"""Evaluation of a converged equilibrium: information accuracy, experienced
disutility, and total travel time, with warm-up/cool-down trimming.

Informed travel time (ITT) for the instantaneous class at (path, t) is the
current-time product provided at t; for the forecast class it is the forecast
made at t for departure at t. Realized travel time (RTT) comes from loading
the equilibrium pattern itself. Accuracy norms are plain Euclidean norms over
all (path, interval) cells inside the trim window, unweighted by departures;
elementwise relative differences are only reported where the class actually
departs more than a floor number of vehicles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .choice import ChoiceParams, systematic_disutility
from .equilibrium import EquilibriumResult
from .network import Network, PathSet, TimeGrid


class MetricsError(ValueError):
    """Raised on undefined metric requests (zero denominators, missing data)."""


def relative_difference(a, b):
    """(a - b) / b for scalars, norm(a - b) / norm(b) for vectors."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 0 and b.ndim == 0:
        if b == 0.0:
            raise MetricsError("relative difference to a zero scalar")
        return float((a - b) / b)
    denom = float(np.linalg.norm(b))
    if denom == 0.0:
        raise MetricsError("relative difference to a zero vector")
    return float(np.linalg.norm(a - b) / denom)


def trim_window(grid: TimeGrid, trim_fraction: float) -> np.ndarray:
    """Boolean mask over departure intervals keeping the mid-horizon part."""
    if not 0 <= trim_fraction < 0.5:
        raise MetricsError("trim fraction must lie in [0, 0.5)")
    T = grid.n_intervals
    cut = int(np.floor(trim_fraction * T))
    mask = np.zeros(T, dtype=bool)
    mask[cut : T - cut] = True
    return mask


@dataclass
class AccuracyReport:
    """Elementwise and aggregate information-accuracy measures."""

    itt_instant: np.ndarray  # paths x T
    itt_forecast: np.ndarray  # paths x T
    rtt: np.ndarray  # paths x T
    rel_diff_instant: np.ndarray  # paths x T, NaN where below departure floor
    rel_diff_forecast: np.ndarray
    departures_instant: np.ndarray
    departures_forecast: np.ndarray
    window: np.ndarray  # bool over intervals
    norm_instant: float  # ||ITT_I - RTT|| over the window
    norm_forecast: float
    norm_rtt: float


def information_accuracy(
    result: EquilibriumResult,
    grid: TimeGrid,
    trim_fraction: float = 0.2,
    departure_floor: float = 1e-6,
) -> AccuracyReport:
    """Compare the information provided at each interval with realized times."""
    if result.model != "dsue-dhi":
        raise MetricsError("information accuracy requires stored per-interval information")
    itt_i = result.instant_trace
    itt_f = result.forecast_diag
    rtt = result.loading.path_time
    window = trim_window(grid, trim_fraction)

    dep_i = result.h_instant
    dep_f = result.h_forecast
    with np.errstate(invalid="ignore", divide="ignore"):
        rd_i = np.where(
            (dep_i > departure_floor) & (rtt > 0), (itt_i - rtt) / rtt, np.nan
        )
        rd_f = np.where(
            (dep_f > departure_floor) & (rtt > 0), (itt_f - rtt) / rtt, np.nan
        )

    win = window[None, :]
    norm_i = float(np.linalg.norm(np.where(win, itt_i - rtt, 0.0)))
    norm_f = float(np.linalg.norm(np.where(win, itt_f - rtt, 0.0)))
    norm_rtt = float(np.linalg.norm(np.where(win, rtt, 0.0)))
    return AccuracyReport(
        itt_instant=itt_i,
        itt_forecast=itt_f,
        rtt=rtt,
        rel_diff_instant=rd_i,
        rel_diff_forecast=rd_f,
        departures_instant=dep_i,
        departures_forecast=dep_f,
        window=window,
        norm_instant=norm_i,
        norm_forecast=norm_f,
        norm_rtt=norm_rtt,
    )


@dataclass
class DisutilityReport:
    """Experienced systematic disutility, weighted by realized departures."""

    per_od_average: dict[str, np.ndarray]  # class name -> (n_ods,), NaN if class empty
    per_od_total: dict[str, np.ndarray]
    overall_average: dict[str, float]
    window: np.ndarray


def _class_matrices(result: EquilibriumResult) -> dict[str, np.ndarray]:
    if result.model == "dsue":
        return {"all": result.h_total}
    return {
        "instant": result.h_instant,
        "forecast": result.h_forecast,
        "all": result.h_total,
    }


def experienced_disutility(
    result: EquilibriumResult,
    net: Network,
    path_set: PathSet,
    grid: TimeGrid,
    params: ChoiceParams,
    trim_fraction: float = 0.2,
) -> DisutilityReport:
    """Disutility evaluated at realized travel times of the actual departures."""
    rtt = result.loading.path_time
    T = grid.n_intervals
    u = params.time_unit_s
    dep_times = grid.interval_mids()
    ta = np.array([params.target_arrival_s[od] for od in path_set.od_of_path])
    v = systematic_disutility(
        rtt / u, dep_times[None, :] / u, ta[:, None] / u, params.mu_early, params.mu_late
    )
    window = trim_window(grid, trim_fraction)
    v_win = np.where(window[None, :], v, 0.0)

    per_od_avg: dict[str, np.ndarray] = {}
    per_od_tot: dict[str, np.ndarray] = {}
    overall: dict[str, float] = {}
    for name, weights in _class_matrices(result).items():
        w_win = np.where(window[None, :], weights, 0.0)
        tot = np.zeros(net.n_ods)
        mass = np.zeros(net.n_ods)
        np.add.at(tot, path_set.od_of_path, (w_win * v_win).sum(axis=1))
        np.add.at(mass, path_set.od_of_path, w_win.sum(axis=1))
        with np.errstate(invalid="ignore", divide="ignore"):
            avg = np.where(mass > 0, tot / mass, np.nan)
        per_od_avg[name] = avg
        per_od_tot[name] = tot
        total_mass = mass.sum()
        overall[name] = float(tot.sum() / total_mass) if total_mass > 0 else float("nan")
    return DisutilityReport(per_od_avg, per_od_tot, overall, window)


def total_travel_time(
    result: EquilibriumResult, grid: TimeGrid, trim_fraction: float = 0.2
) -> float:
    """Departure-weighted realized travel time (vehicle-seconds) in the window."""
    window = trim_window(grid, trim_fraction)
    rtt = result.loading.path_time
    return float(np.sum(np.where(window[None, :], result.h_total * rtt, 0.0)))
