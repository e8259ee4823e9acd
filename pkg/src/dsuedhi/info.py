"""Information generation: instantaneous travel times and strategic forecasts.

At each provision interval two products are built from a candidate departure
pattern. The instantaneous product is the per-path sum of current link travel
times, read directly off the candidate loading. The strategic forecast
predicts what travel times will be if every traveler still to depart reacts to
the instantaneous product: the pooled remaining demand is logit-assigned under
the instantaneous times, the predicted columns are spliced onto the realized
history, and the spliced pattern is loaded again; the forecast travel times
are the realized-style path times of that hypothetical world.

Generating the full information set for one candidate therefore costs exactly
one loading for the instantaneous product plus one loading per provision
interval; ``dnl.load_call_count`` exposes the tally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import choice, dnl
from .network import Network, PathSet, TimeGrid


@dataclass(frozen=True)
class InstantInfo:
    """Current travel time per path, provided at one interval."""

    t_index: int
    phi_s: np.ndarray  # (paths,)


@dataclass(frozen=True)
class ForecastInfo:
    """Forecast travel time per path and remaining departure interval."""

    t_index: int
    phi_s: np.ndarray  # (paths, remaining intervals)


def instant_info(loading: dnl.LoadingResult, t_index: int) -> InstantInfo:
    return InstantInfo(t_index, dnl.instantaneous_path_times(loading, t_index))


def pooled_remaining_demand(
    h_total: np.ndarray, t_index: int, net: Network, path_set: PathSet
) -> np.ndarray:
    """Travelers of both classes not yet departed under the candidate pattern."""
    totals = np.array([od.demand_total for od in net.od_pairs])
    return choice.remaining_demand(h_total[:, :t_index], totals, path_set)


def forecast_departures(
    instant: InstantInfo,
    pooled_demand: np.ndarray,
    grid: TimeGrid,
    path_set: PathSet,
    params: choice.ChoiceParams,
) -> np.ndarray:
    """Predicted departures of all remaining travelers reacting to current times."""
    return choice.tentative_departures(
        instant.phi_s, pooled_demand, instant.t_index, grid, path_set, params
    )


def splice(h_history: np.ndarray, h_predicted: np.ndarray, t_index: int) -> np.ndarray:
    """Columns before ``t_index`` from the history, the rest from the prediction."""
    h_history = np.asarray(h_history, dtype=float)
    h_predicted = np.asarray(h_predicted, dtype=float)
    expected = (h_history.shape[0], h_history.shape[1] - t_index)
    if h_predicted.shape != expected:
        raise ValueError(
            f"predicted departures shape {h_predicted.shape} != {expected}"
        )
    out = h_history.copy()
    out[:, t_index:] = h_predicted
    return out


def forecast_info(
    net: Network,
    path_set: PathSet,
    grid: TimeGrid,
    spliced: np.ndarray,
    t_index: int,
    base_loading: dnl.LoadingResult | None = None,
) -> ForecastInfo:
    """Load the spliced pattern and read off its path travel times from now on.

    ``base_loading`` (the candidate loading kept with state) lets the shared
    history prefix be reused; the result is bit-identical to a cold load.
    """
    warm = (base_loading, t_index) if base_loading is not None else None
    loading = dnl.load(
        net, path_set, grid, spliced, compute_link_times=False, warm_start=warm
    )
    return ForecastInfo(t_index, loading.path_time[:, t_index:].copy())
