"""Dynamic network loading on cumulative curves.

Link-transmission-style kinematic wave model on a triangular fundamental
diagram. Per time step, each link offers a sending flow (demand) and a
receiving flow (supply); node models resolve the competition: merges split
supply in proportion to demand, diverges scale a link's whole sendable flow so
that no outgoing supply is exceeded (FIFO-proportional restriction).

The sending flow follows the corrected rule: with a positive backlog the link
may discharge at most the backlog itself within one step (never more than
capacity); without a backlog it discharges what arrives at the downstream end
during the step. Vehicles are fluid; cumulative counts are sampled at interval
boundaries and linearly interpolated in between. Origins feed the first link
of each path through unbounded-storage source connectors whose waits count
toward path travel time; destinations are sinks with infinite supply.

Loading continues past the departure horizon until the network drains (or a
step cap is hit, in which case remaining trips are extrapolated at terminal
discharge rate and flagged).

When some link's free-flow time is shorter than the departure interval, the
loader refines its internal step until every link spans at least one step, so
sub-interval traversal stays exact whenever free-flow times divide the
interval; departures, probes, and reported travel times remain on the
departure grid.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .network import Network, PathSet, TimeGrid

_EPS_VEH = 1e-12

_counter_lock = threading.Lock()
_load_calls = 0


class DnlError(RuntimeError):
    """Raised when loading input is infeasible or internally inconsistent."""


def load_call_count() -> int:
    """Number of load() invocations since the last reset (diagnostics)."""
    return _load_calls


def reset_load_call_count() -> None:
    global _load_calls
    with _counter_lock:
        _load_calls = 0


@dataclass(frozen=True)
class DepartureMatrix:
    """Path-by-interval departures (vehicles per interval) with a class tag."""

    values: np.ndarray
    kind: str = "total"  # instantaneous | forecast | total

    def __post_init__(self) -> None:
        if self.kind not in ("instantaneous", "forecast", "total"):
            raise ValueError(f"unknown departure class tag {self.kind!r}")
        if np.min(self.values, initial=0.0) < -1e-9:
            raise ValueError("departure matrix has negative entries")


def check_feasible(
    values: np.ndarray,
    path_set: PathSet,
    demand_per_od: np.ndarray,
    rel_tol: float = 1e-9,
) -> None:
    """Verify per-OD totals match the class demands (membership in the feasible set)."""
    if values.min(initial=0.0) < -rel_tol:
        raise ValueError("departure matrix has negative entries")
    for od_index, d in enumerate(demand_per_od):
        got = values[path_set.od_slices[od_index]].sum()
        if abs(got - d) > rel_tol * max(1.0, d):
            raise ValueError(
                f"OD {od_index}: departures sum to {got!r}, demand is {d!r}"
            )


@dataclass
class LoadingResult:
    """Cumulative curves plus link and path travel times of one loading."""

    grid: TimeGrid
    n_steps: int
    sim_dt_s: float
    n_up: np.ndarray  # links x (n_steps+1), cumulative entries at sim boundaries
    n_dn: np.ndarray  # links x (n_steps+1), cumulative exits at boundaries
    src_up: np.ndarray  # sources x (n_steps+1)
    src_dn: np.ndarray
    source_links: tuple[int, ...]
    path_time: np.ndarray  # paths x T, travel time per departure interval
    extrapolated: np.ndarray  # paths x T bool, trip extended past simulation
    link_time: np.ndarray | None = None  # links x T, entry-time travel times
    instant_path_time: np.ndarray | None = None  # paths x T, sums of current link times
    drained: bool = True
    _pup: tuple[np.ndarray, ...] | None = field(default=None, repr=False)

    @property
    def boundaries(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.sim_dt_s

    def vehicles_stored(self) -> float:
        """Vehicles inside links or waiting at sources at the final boundary."""
        on_links = float(np.sum(self.n_up[:, -1] - self.n_dn[:, -1]))
        at_sources = float(np.sum(self.src_up[:, -1] - self.src_dn[:, -1]))
        return on_links + at_sources

    def write_curves_csv(self, path, links: tuple) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("link_id,t,n_up,n_dn\n")
            times = self.boundaries
            for a, link in enumerate(links):
                for k, t in enumerate(times):
                    fh.write(
                        f"{link.link_id},{t:.12g},{self.n_up[a, k]:.12g},{self.n_dn[a, k]:.12g}\n"
                    )


def link_demand_rate(
    n_up_lagged: float,
    n_dn_now: float,
    arrival_mass: float,
    capacity_vps: float,
    dt_s: float,
) -> float:
    """Sending flow rate of one link over one step.

    ``n_up_lagged`` is the upstream cumulative count one free-flow time ago,
    ``arrival_mass`` the flow reaching the downstream end during the step when
    no backlog is queued.
    """
    backlog = n_up_lagged - n_dn_now
    if backlog > _EPS_VEH:
        return min(capacity_vps, backlog / dt_s)
    return min(capacity_vps, max(arrival_mass, 0.0) / dt_s)


def link_supply_rate(
    n_dn_wave_lagged: float,
    n_up_now: float,
    storage_veh: float,
    capacity_vps: float,
    dt_s: float,
) -> float:
    """Receiving flow rate of one link over one step, floored at zero."""
    room = n_dn_wave_lagged + storage_veh - n_up_now
    return max(0.0, min(capacity_vps, room / dt_s))


def node_flux(
    movement_demand: dict[tuple, float],
    supply: dict,
) -> dict[tuple, float]:
    """Resolve per-movement flows at a node.

    Each movement key is (sender, receiver). Receivers absent from ``supply``
    are unconstrained sinks. Supply is split among competing senders in
    proportion to their movement demands; each sender's movements are then
    scaled by a common factor so no receiving supply is exceeded.
    """
    inflow_demand: dict = {}
    for (_, receiver), d in movement_demand.items():
        inflow_demand[receiver] = inflow_demand.get(receiver, 0.0) + d
    factor = {}
    for receiver, total in inflow_demand.items():
        cap = supply.get(receiver, np.inf)
        factor[receiver] = 1.0 if total <= cap or total <= 0.0 else cap / total
    sender_scale: dict = {}
    for (sender, receiver), d in movement_demand.items():
        if d <= 0.0:
            continue
        f = factor[receiver]
        sender_scale[sender] = min(sender_scale.get(sender, 1.0), f)
    return {
        (sender, receiver): d * sender_scale.get(sender, 1.0)
        for (sender, receiver), d in movement_demand.items()
    }


def _interp(values: np.ndarray, dt: float, t: float) -> float:
    """Piecewise-linear value of a boundary-sampled curve, clamped outside."""
    if t <= 0.0:
        return float(values[0])
    x = t / dt
    idx = int(x)
    last = len(values) - 1
    if idx >= last:
        return float(values[last])
    return float(values[idx]) + (x - idx) * (float(values[idx + 1]) - float(values[idx]))


def _interp_vec(values: np.ndarray, dt: float, times: np.ndarray) -> np.ndarray:
    last = len(values) - 1
    x = np.clip(times / dt, 0.0, float(last))
    idx = np.minimum(x.astype(np.intp), last - 1)
    frac = x - idx
    return values[idx] + frac * (values[idx + 1] - values[idx])


def _invert_vec(
    values: np.ndarray, dt: float, targets: np.ndarray, rate_beyond: float
) -> tuple[np.ndarray, np.ndarray]:
    """Earliest times at which a non-decreasing curve reaches the targets.

    Targets are relaxed by a vanishing epsilon so that a probe carrying only
    numerical dust (logit tail masses far below one vehicle) does not wait for
    the next real cohort. Beyond the last sample the curve is extended at
    ``rate_beyond``; the second return flags targets that needed that
    extension.
    """
    targets = np.asarray(targets, dtype=float)
    targets = np.maximum(targets - (_EPS_VEH + _EPS_VEH * targets), 0.0)
    idx = np.searchsorted(values, targets, side="left")
    out = np.empty_like(targets)
    beyond = idx >= len(values)
    inside = (~beyond) & (idx > 0)
    at_zero = idx == 0
    out[at_zero] = 0.0
    if np.any(inside):
        i = idx[inside]
        lo = values[i - 1]
        hi = values[i]
        out[inside] = ((i - 1) + (targets[inside] - lo) / (hi - lo)) * dt
    if np.any(beyond):
        out[beyond] = (len(values) - 1) * dt + (targets[beyond] - values[-1]) / rate_beyond
    return out, beyond


def _invert(values: np.ndarray, dt: float, target: float, rate_beyond: float) -> float:
    out, _ = _invert_vec(values, dt, np.array([target]), rate_beyond)
    return float(out[0])


class _Plan:
    """Static per-(network, path set) structure used by the stepper."""

    def __init__(self, net: Network, path_set: PathSet):
        self.n_links = net.n_links
        self.ff = np.array([l.free_flow_s for l in net.links])
        self.wave_lag = np.array([l.length_m / l.backward_wave_mps for l in net.links])
        self.cap = np.array([l.capacity_vps for l in net.links])
        self.storage = np.array([l.storage_veh for l in net.links])

        first_links = sorted({seq[0] for seq in path_set.link_seq})
        self.source_links = tuple(first_links)
        self.src_index = {a: s for s, a in enumerate(first_links)}
        self.src_of_path = np.array(
            [self.src_index[seq[0]] for seq in path_set.link_seq], dtype=np.intp
        )
        self.src_paths: list[list[int]] = [[] for _ in first_links]
        for p, seq in enumerate(path_set.link_seq):
            self.src_paths[self.src_index[seq[0]]].append(p)

        # per link: paths traversing it and each path's successor link (-1 exits)
        self.link_paths: list[list[int]] = [[] for _ in range(net.n_links)]
        self.link_next: list[list[int]] = [[] for _ in range(net.n_links)]
        for p, seq in enumerate(path_set.link_seq):
            for pos, a in enumerate(seq):
                self.link_paths[a].append(p)
                self.link_next[a].append(seq[pos + 1] if pos + 1 < len(seq) else -1)
        # slot of each path within its downstream link's slot list
        self.slot_in_link = [
            {p: j for j, p in enumerate(paths)} for paths in self.link_paths
        ]
        self.link_targets: list[np.ndarray] = [
            np.array(nxt, dtype=np.intp) for nxt in self.link_next
        ]


def load(
    net: Network,
    path_set: PathSet,
    grid: TimeGrid,
    departures: np.ndarray | DepartureMatrix,
    *,
    compute_link_times: bool = True,
    keep_state: bool = False,
    warm_start: tuple[LoadingResult, int] | None = None,
    drain_max_steps: int | None = None,
) -> LoadingResult:
    """Map total path departures to link and path travel times.

    Deterministic: identical inputs give bit-identical results. With
    ``warm_start=(base, k)`` the first k steps are copied from ``base`` (which
    must have been run with ``keep_state=True`` on departures identical below
    column k); the outcome is bit-identical to a cold run.
    """
    global _load_calls
    with _counter_lock:
        _load_calls += 1

    h = departures.values if isinstance(departures, DepartureMatrix) else departures
    h = np.asarray(h, dtype=float)
    T = grid.n_intervals
    if h.shape != (path_set.n_paths, T):
        raise DnlError(f"departure matrix shape {h.shape} != (paths, intervals) "
                       f"({path_set.n_paths}, {T})")
    if h.min(initial=0.0) < -1e-9:
        raise DnlError("negative departures")
    h = np.maximum(h, 0.0)

    plan = _Plan(net, path_set)
    A = plan.n_links
    n_src = len(plan.source_links)
    # refine the internal step until every link spans at least one step
    min_ff = float(plan.ff.min()) if A else grid.dt_s
    refine = max(1, int(np.ceil(grid.dt_s / min_ff - 1e-12)))
    dt = grid.dt_s / refine
    t_sim = T * refine
    if drain_max_steps is None:
        drain_max_steps = 20 * t_sim + 200
    s_max = t_sim + drain_max_steps

    # exogenous source entry curves (known for the whole horizon up front);
    # departures ramp linearly inside each departure interval
    h_cum = np.concatenate([np.zeros((path_set.n_paths, 1)), np.cumsum(h, axis=1)], axis=1)
    fine = np.linspace(0.0, 1.0, refine + 1)[1:-1] if refine > 1 else np.empty(0)
    src_up = np.zeros((n_src, s_max + 1))
    psrc_up: list[np.ndarray] = []
    for s, paths in enumerate(plan.src_paths):
        rows = h_cum[paths]
        curve = np.empty((len(paths), s_max + 1))
        curve[:, : t_sim + 1 : refine] = rows
        for j, frac in enumerate(fine, start=1):
            curve[:, j : t_sim + 1 : refine] = rows[:, :-1] + frac * np.diff(rows, axis=1)
        curve[:, t_sim + 1 :] = rows[:, -1:]
        psrc_up.append(curve)
        src_up[s] = curve.sum(axis=0)
    total_demand = float(h.sum())

    n_up = np.zeros((A, s_max + 1))
    n_dn = np.zeros((A, s_max + 1))
    src_dn = np.zeros((n_src, s_max + 1))
    pup = [np.zeros((len(paths), s_max + 1)) for paths in plan.link_paths]

    start_step = 0
    if warm_start is not None:
        base, start_interval = warm_start
        start_step = start_interval * refine
        if base._pup is None:
            raise DnlError("warm start requires a base loading kept with state")
        if start_step > base.n_steps:
            raise DnlError("warm start beyond the base loading horizon")
        k = start_step + 1
        n_up[:, :k] = base.n_up[:, :k]
        n_dn[:, :k] = base.n_dn[:, :k]
        src_dn[:, :k] = base.src_dn[:, :k]
        for a in range(A):
            pup[a][:, :k] = base._pup[a][:, :k]

    drain_tol = 1e-9 * max(1.0, total_demand)
    cap = plan.cap
    ff = plan.ff
    wave = plan.wave_lag
    storage = plan.storage

    n_steps = s_max
    drained = False
    for t in range(start_step, s_max):
        now = t * dt
        n_up[:, t + 1] = n_up[:, t]
        n_dn[:, t + 1] = n_dn[:, t]
        src_dn[:, t + 1] = src_dn[:, t]
        for a in range(A):
            pup[a][:, t + 1] = pup[a][:, t]

        # sending masses and FIFO compositions
        comps: list[np.ndarray | None] = [None] * A
        for a in range(A):
            ndn_now = float(n_dn[a, t])
            nup_lag = _interp(n_up[a], dt, now - ff[a])
            arr_hi = _interp(n_up[a], dt, min(now + dt - ff[a], now))
            rate = link_demand_rate(nup_lag, ndn_now, arr_hi - nup_lag, cap[a], dt)
            mass = rate * dt
            if mass <= _EPS_VEH:
                continue
            bound = (nup_lag if nup_lag - ndn_now > _EPS_VEH else arr_hi) - ndn_now
            mass = min(mass, bound)
            tau0 = _invert(n_up[a][: t + 1], dt, ndn_now, cap[a])
            tau1 = _invert(n_up[a][: t + 1], dt, ndn_now + mass, cap[a])
            comp = (
                _interp_cols(pup[a], t + 1, dt, tau1)
                - _interp_cols(pup[a], t + 1, dt, tau0)
            )
            np.maximum(comp, 0.0, out=comp)
            total = comp.sum()
            if total > 0.0:
                comp *= mass / total
            comps[a] = comp

        src_mass = np.zeros(n_src)
        src_comps: list[np.ndarray | None] = [None] * n_src
        for s in range(n_src):
            mass = float(src_up[s, t + 1] - src_dn[s, t])
            if mass <= _EPS_VEH:
                continue
            tau0 = _invert(src_up[s][: t + 2], dt, float(src_dn[s, t]), 1.0)
            tau1 = _invert(src_up[s][: t + 2], dt, float(src_dn[s, t]) + mass, 1.0)
            comp = (
                _interp_cols(psrc_up[s], t + 2, dt, tau1)
                - _interp_cols(psrc_up[s], t + 2, dt, tau0)
            )
            np.maximum(comp, 0.0, out=comp)
            total = comp.sum()
            if total > 0.0:
                comp *= mass / total
            src_mass[s] = mass
            src_comps[s] = comp

        # receiving masses and movement aggregation
        recv_mass = np.empty(A)
        for b in range(A):
            ndn_wave = _interp(n_dn[b], dt, now - wave[b])
            recv_mass[b] = (
                link_supply_rate(ndn_wave, float(n_up[b, t]), storage[b], cap[b], dt) * dt
            )

        inflow_demand = np.zeros(A)
        for a in range(A):
            if comps[a] is None:
                continue
            targets = plan.link_targets[a]
            mask = targets >= 0
            if np.any(mask):
                np.add.at(inflow_demand, targets[mask], comps[a][mask])
        for s in range(n_src):
            if src_comps[s] is not None:
                inflow_demand[plan.source_links[s]] += src_mass[s]

        factor = np.ones(A)
        constrained = inflow_demand > recv_mass
        factor[constrained] = recv_mass[constrained] / inflow_demand[constrained]

        # apply flows: diverge scaling, per-path transfer to successor links
        for a in range(A):
            comp = comps[a]
            if comp is None:
                continue
            targets = plan.link_targets[a]
            theta = 1.0
            for j in range(len(targets)):
                b = targets[j]
                if b >= 0 and comp[j] > 0.0:
                    f = factor[b]
                    if f < theta:
                        theta = f
            if theta <= 0.0:
                continue
            out = comp if theta == 1.0 else comp * theta
            n_dn[a, t + 1] += out.sum()
            paths_a = plan.link_paths[a]
            for j in range(len(targets)):
                b = targets[j]
                if b >= 0 and out[j] > 0.0:
                    slot = plan.slot_in_link[b][paths_a[j]]
                    pup[b][slot, t + 1] += out[j]
                    n_up[b, t + 1] += out[j]
        for s in range(n_src):
            comp = src_comps[s]
            if comp is None:
                continue
            b = plan.source_links[s]
            theta = factor[b]
            if theta <= 0.0:
                continue
            out = comp if theta == 1.0 else comp * theta
            src_dn[s, t + 1] += out.sum()
            n_up[b, t + 1] += out.sum()
            paths_s = plan.src_paths[s]
            for j in range(len(paths_s)):
                if out[j] > 0.0:
                    slot = plan.slot_in_link[b][paths_s[j]]
                    pup[b][slot, t + 1] += out[j]

        if t + 1 >= t_sim:
            stored = float(np.sum(n_up[:, t + 1] - n_dn[:, t + 1]))
            stored += float(np.sum(src_up[:, t + 1] - src_dn[:, t + 1]))
            if stored <= drain_tol:
                n_steps = t + 1
                drained = True
                break

    S = n_steps
    n_up = np.ascontiguousarray(n_up[:, : S + 1])
    n_dn = np.ascontiguousarray(n_dn[:, : S + 1])
    src_up = np.ascontiguousarray(src_up[:, : S + 1])
    src_dn = np.ascontiguousarray(src_dn[:, : S + 1])
    pup = [np.ascontiguousarray(c[:, : S + 1]) for c in pup]

    path_time, extrapolated = _path_times(plan, path_set, grid, dt, n_up, n_dn, src_up, src_dn)
    link_time = None
    instant = None
    if compute_link_times:
        link_time = _link_times(plan, grid, dt, n_up, n_dn)
        instant = np.zeros((path_set.n_paths, T))
        for p, seq in enumerate(path_set.link_seq):
            for a in seq:
                instant[p] += link_time[a]

    return LoadingResult(
        grid=grid,
        n_steps=S,
        sim_dt_s=dt,
        n_up=n_up,
        n_dn=n_dn,
        src_up=src_up,
        src_dn=src_dn,
        source_links=plan.source_links,
        path_time=path_time,
        extrapolated=extrapolated,
        link_time=link_time,
        instant_path_time=instant,
        drained=drained,
        _pup=tuple(pup) if keep_state else None,
    )


def _interp_cols(curves: np.ndarray, n_known: int, dt: float, t: float) -> np.ndarray:
    """Interpolate several boundary-sampled curves (rows) at one time."""
    last = n_known - 1
    if t <= 0.0:
        return curves[:, 0].copy()
    x = t / dt
    idx = int(x)
    if idx >= last:
        return curves[:, last].copy()
    frac = x - idx
    return curves[:, idx] + frac * (curves[:, idx + 1] - curves[:, idx])


def _link_times(plan: _Plan, grid: TimeGrid, sim_dt: float, n_up, n_dn) -> np.ndarray:
    """Travel time for entry at each departure-interval boundary, per link."""
    times = grid.interval_starts()
    out = np.empty((plan.n_links, grid.n_intervals))
    for a in range(plan.n_links):
        entries = _interp_vec(n_up[a], sim_dt, times)
        exit_t, _ = _invert_vec(n_dn[a], sim_dt, entries, plan.cap[a])
        out[a] = np.maximum(plan.ff[a], exit_t - times)
    return out


def _path_times(
    plan: _Plan, path_set: PathSet, grid: TimeGrid, sim_dt: float, n_up, n_dn, src_up, src_dn
) -> tuple[np.ndarray, np.ndarray]:
    """Chain FIFO exit times through source and links, per departure interval.

    The probe for interval t is the cohort's median vehicle: it departs at the
    interval midpoint with half of its own column ahead of it, so a column
    feels the queue it builds itself.
    """
    mids = grid.interval_mids()
    path_time = np.empty((path_set.n_paths, grid.n_intervals))
    extrapolated = np.zeros((path_set.n_paths, grid.n_intervals), dtype=bool)
    for p, seq in enumerate(path_set.link_seq):
        s = plan.src_of_path[p]
        counts = _interp_vec(src_up[s], sim_dt, mids)
        clock, beyond = _invert_vec(src_dn[s], sim_dt, counts, plan.cap[seq[0]])
        clock = np.maximum(clock, mids)
        flagged = beyond.copy()
        for a in seq:
            counts = _interp_vec(n_up[a], sim_dt, clock)
            exit_t, beyond = _invert_vec(n_dn[a], sim_dt, counts, plan.cap[a])
            clock = np.maximum(clock + plan.ff[a], exit_t)
            flagged |= beyond
        path_time[p] = clock - mids
        extrapolated[p] = flagged
    return path_time, extrapolated


def instantaneous_path_times(loading: LoadingResult, t_index: int) -> np.ndarray:
    """Sum of current link travel times along each path at one boundary."""
    if loading.instant_path_time is None:
        raise DnlError("loading was computed without link times")
    return loading.instant_path_time[:, t_index].copy()


def path_travel_time(loading: LoadingResult, path_index: int, t_index: int) -> float:
    """Realized travel time for a departure at one interval boundary."""
    return float(loading.path_time[path_index, t_index])
