"""Travel choice model: disutility, logit shares, tentative and realized departures.

Travelers facing a joint path-and-departure-time choice perceive a systematic
disutility equal to travel time plus a quadratic early/late arrival penalty,
and split according to a logit over every (path, departure interval) still
open for their OD pair. The random taste terms are handled in closed form by
the logit; nothing is ever sampled.

The quadratic penalty is evaluated in a configurable disutility time unit
(minutes by default); travel times, departure times, and target arrivals are
converted from seconds before entering the formula.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import PathSet, TimeGrid


class ChoiceError(ValueError):
    """Raised on infeasible demand bookkeeping or malformed choice inputs."""


@dataclass(frozen=True)
class ChoiceParams:
    """Dispersion, schedule penalties, per-OD target arrivals, and time unit.

    ``mu_early`` < 1 < ``mu_late``: travelers dislike late arrival more.
    ``time_unit_s`` is the length in seconds of one disutility time unit.
    """

    theta: float
    target_arrival_s: tuple[float, ...]
    mu_early: float = 0.8
    mu_late: float = 1.2
    time_unit_s: float = 60.0

    def __post_init__(self) -> None:
        if self.theta <= 0:
            raise ChoiceError("dispersion theta must be positive")
        if not 0 < self.mu_early < 1 < self.mu_late:
            raise ChoiceError("penalties must satisfy 0 < mu_early < 1 < mu_late")
        if self.time_unit_s <= 0:
            raise ChoiceError("time unit must be positive")


def systematic_disutility(phi, t, target_arrival, mu_early: float, mu_late: float):
    """Travel time plus quadratic schedule-delay penalty.

    All time arguments must share one unit; the result is expressed in that
    same unit (plus its square for the penalty term). Arrival exactly at the
    target incurs no penalty; early arrivals are weighted by ``mu_early``,
    late ones by ``mu_late``.
    """
    gap = np.asarray(t, dtype=float) + phi - target_arrival
    penalty = np.where(gap < 0.0, mu_early, mu_late)
    value = phi + penalty * gap * gap
    return float(value) if np.ndim(value) == 0 else value


def _departure_times_s(grid: TimeGrid, t_index: int) -> np.ndarray:
    T = grid.n_intervals
    if not 0 <= t_index < T:
        raise ChoiceError(f"provision interval {t_index} outside horizon")
    return (np.arange(t_index, T) + 0.5) * grid.dt_s


def disutility_from_instant(
    phi_instant_s: np.ndarray,
    t_index: int,
    grid: TimeGrid,
    target_arrival_s: np.ndarray,
    params: ChoiceParams,
) -> np.ndarray:
    """Disutility matrix (paths x remaining intervals) under instantaneous info.

    The single current travel time of each path is reused for every future
    departure column; only the schedule penalty varies across columns.
    """
    dep = _departure_times_s(grid, t_index)
    u = params.time_unit_s
    return systematic_disutility(
        np.asarray(phi_instant_s)[:, None] / u,
        dep[None, :] / u,
        np.asarray(target_arrival_s)[:, None] / u,
        params.mu_early,
        params.mu_late,
    )


def disutility_from_forecast(
    phi_forecast_s: np.ndarray,
    t_index: int,
    grid: TimeGrid,
    target_arrival_s: np.ndarray,
    params: ChoiceParams,
) -> np.ndarray:
    """Disutility matrix under forecast info: one travel time per column."""
    dep = _departure_times_s(grid, t_index)
    phi = np.asarray(phi_forecast_s)
    if phi.ndim != 2 or phi.shape[1] != dep.shape[0]:
        raise ChoiceError(
            f"forecast shape {phi.shape} does not cover the {dep.shape[0]} remaining intervals"
        )
    u = params.time_unit_s
    return systematic_disutility(
        phi / u,
        dep[None, :] / u,
        np.asarray(target_arrival_s)[:, None] / u,
        params.mu_early,
        params.mu_late,
    )


def logit_probabilities(psi: np.ndarray, theta: float) -> np.ndarray:
    """Logit shares over one choice set (all entries of ``psi`` jointly).

    Computed with a max-shift so large theta*psi cannot overflow; entries sum
    to one up to floating-point residual.
    """
    psi = np.asarray(psi, dtype=float)
    if psi.size == 0:
        raise ChoiceError("empty choice set")
    if not np.all(np.isfinite(psi)):
        raise ChoiceError("disutility matrix has non-finite entries")
    z = -theta * psi
    z -= z.max()
    w = np.exp(z)
    return w / w.sum()


def tentative_departures(
    phi_s: np.ndarray,
    remaining_demand: np.ndarray,
    t_index: int,
    grid: TimeGrid,
    path_set: PathSet,
    params: ChoiceParams,
) -> np.ndarray:
    """Assign each OD's remaining demand over its open (path, interval) choices.

    ``phi_s`` is either a per-path vector of instantaneous travel times or a
    paths-x-remaining-intervals forecast matrix; the vector form reuses the
    current time for every future column. Per-OD totals are conserved exactly
    (the floating-point residual of the share sum is folded into the
    largest-share cell).
    """
    phi_s = np.asarray(phi_s, dtype=float)
    ta = np.array([params.target_arrival_s[od] for od in path_set.od_of_path])
    if phi_s.ndim == 1:
        psi = disutility_from_instant(phi_s, t_index, grid, ta, params)
    else:
        psi = disutility_from_forecast(phi_s, t_index, grid, ta, params)
    out = np.zeros_like(psi)
    remaining_demand = np.asarray(remaining_demand, dtype=float)
    for od_index, sl in enumerate(path_set.od_slices):
        if sl.stop == sl.start:
            continue
        d = float(remaining_demand[od_index])
        if d < 0:
            raise ChoiceError(f"negative remaining demand for OD {od_index}")
        if d == 0.0:
            continue
        prob = logit_probabilities(psi[sl], params.theta)
        block = prob * d
        residual = d - block.sum()
        flat = block.reshape(-1)
        flat[np.argmax(prob.reshape(-1))] += residual
        out[sl] = block
    return out


def remaining_demand(
    realized_history: np.ndarray,
    class_demand: np.ndarray,
    path_set: PathSet,
    rel_tol: float = 1e-9,
) -> np.ndarray:
    """Per-OD demand not yet departed, given realized columns before now.

    Tiny negative remainders (floating-point dust within ``rel_tol``) are
    clamped to zero; anything larger is an overdraw error.
    """
    class_demand = np.asarray(class_demand, dtype=float)
    departed = np.zeros_like(class_demand)
    if realized_history.size:
        per_path = realized_history.sum(axis=1)
        np.add.at(departed, path_set.od_of_path, per_path)
    remaining = class_demand - departed
    floor = -rel_tol * np.maximum(1.0, class_demand)
    if np.any(remaining < floor):
        worst = int(np.argmin(remaining - floor))
        raise ChoiceError(
            f"OD {worst}: cumulative departures {departed[worst]!r} exceed "
            f"class demand {class_demand[worst]!r}"
        )
    return np.maximum(remaining, 0.0)


def realize_departures(tentative: np.ndarray) -> np.ndarray:
    """Only the current interval's column of a tentative plan executes."""
    tentative = np.asarray(tentative, dtype=float)
    if tentative.ndim != 2 or tentative.shape[1] < 1:
        raise ChoiceError("tentative departures must have at least one column")
    return tentative[:, 0].copy()
