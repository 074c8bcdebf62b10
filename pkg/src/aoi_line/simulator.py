"""Event-driven Monte-Carlo simulation of a preemptive line network.

Conventions that the analysis leaves open:

* All nodes start idle at ``t = 0`` and every node starts with a virtual
  delivered timestamp of 0, so ``age_i(t) = t`` until node ``i`` completes
  its first service.
* Time averages exclude the burn-in window ``[0, burn_in_fraction * U_last]``
  where ``U_last`` is the generation time of the final source update.
  Running averages start at 0 and never exclude anything.
* The run ends when the event queue is empty, i.e. once every in-flight
  update has been delivered or discarded.  Because nothing can preempt the
  final update, the last event is its delivery to the monitor.
* Ties in event time (probability zero) are broken by insertion order.

Randomness: ``SeedSequence(seed)`` spawns two PCG64 streams, the first for
interarrival times and the second for service times.  Exponential variates
use the inverse transform ``-log(1 - U) / rate``.  Replication ``r`` of a
config with seed ``s`` runs with seed ``derive_seed(s, r)``.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .line_models import ConfigError, LineNetworkConfig, WrongNodeCount

__all__ = [
    "SimConfig",
    "AgePath",
    "SimSummary",
    "ReplicationResult",
    "run",
    "occupancy_fractions",
    "replicate",
    "derive_seed",
    "INITIAL_AGE_CONVENTION",
]

INITIAL_AGE_CONVENTION = "timestamp-0: age_i(t) = t before the first completion at node i"

_BLOCK = 4096
# Occupancy bookkeeping needs 2**n slots.
_MAX_OCCUPANCY_NODES = 16


@dataclass(frozen=True)
class SimConfig:
    network: LineNetworkConfig
    arrivals: int
    seed: int = 0
    sample_interval: float | None = None
    burn_in_fraction: float = 0.1

    def __post_init__(self):
        if isinstance(self.arrivals, bool) or not isinstance(self.arrivals, (int, np.integer)):
            raise ConfigError(f"arrivals must be an integer, got {self.arrivals!r}")
        if self.arrivals < 1:
            raise ConfigError(f"arrivals must be at least 1, got {self.arrivals}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        if self.sample_interval is not None and not (
            math.isfinite(self.sample_interval) and self.sample_interval > 0
        ):
            raise ConfigError(f"sample_interval must be positive, got {self.sample_interval}")
        if not 0.0 <= self.burn_in_fraction < 1.0:
            raise ConfigError(f"burn_in_fraction must lie in [0, 1), got {self.burn_in_fraction}")


@dataclass
class AgePath:
    """Piecewise-linear age at the output of one node.

    ``times[k]`` is a breakpoint where the age drops from ``ages_before[k]``
    to ``ages_after[k]``; in between the age grows with slope 1.  The first
    breakpoint is ``t = 0`` and the last is the horizon (both without a jump).
    ``running_average`` pairs each jump time with the mean age over ``[0, t]``.
    """

    node: int
    times: np.ndarray
    ages_before: np.ndarray
    ages_after: np.ndarray
    running_times: np.ndarray
    running_average: np.ndarray
    update_times: np.ndarray | None = None  # generation time behind each downward jump
    samples: np.ndarray | None = None  # (k, 2) rows of (time, age) on a fixed grid

    @property
    def breakpoints(self):
        return list(zip(self.times.tolist(), self.ages_after.tolist()))

    def age_at(self, t):
        """Age just after time ``t`` (vectorised)."""
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.times, t, side="right") - 1
        return self.ages_after[k] + (t - self.times[k])

    def timestamps(self) -> np.ndarray:
        """Generation times of the updates behind each downward jump."""
        if self.update_times is not None:
            return self.update_times
        jump = self.ages_after < self.ages_before
        return self.times[jump] - self.ages_after[jump]


@dataclass
class SimSummary:
    per_node_time_avg_age: list[float]
    delivered: list[int]
    preempted: list[int]
    arrivals_in: list[int]
    in_service_at_end: list[int]
    horizon: float
    burn_in_time: float
    per_node_running_avg_age: list[float]
    occupancy_time: list[float] | None = None
    seed: int = 0
    arrivals: int = 0
    initial_age_convention: str = INITIAL_AGE_CONVENTION

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "arrivals": self.arrivals,
            "horizon": self.horizon,
            "burn_in_time": self.burn_in_time,
            "per_node_time_avg_age": self.per_node_time_avg_age,
            "per_node_running_avg_age": self.per_node_running_avg_age,
            "delivered": self.delivered,
            "preempted": self.preempted,
            "arrivals_in": self.arrivals_in,
            "in_service_at_end": self.in_service_at_end,
            "initial_age_convention": self.initial_age_convention,
        }


def derive_seed(seed: int, index: int) -> int:
    """Seed of replication ``index``; a pure function of ``(seed, index)``."""
    ss = np.random.SeedSequence(seed, spawn_key=(index,))
    return int(ss.generate_state(1, np.uint64)[0])


def _streams(seed):
    arrival_ss, service_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.Generator(np.random.PCG64(arrival_ss)), np.random.Generator(
        np.random.PCG64(service_ss)
    )


def _std_exponential(rng, size):
    return -np.log1p(-rng.random(size))


def run(config: SimConfig, record_paths: bool = True):
    """Simulate ``config.arrivals`` source updates through the line.

    Returns ``(paths, summary)``; ``paths`` is empty when ``record_paths``
    is false, which is considerably cheaper for long runs.
    """
    net = config.network
    n = net.n
    mu = net.mu
    arrival_rng, service_rng = _streams(config.seed)
    arrival_times = np.cumsum(_std_exponential(arrival_rng, config.arrivals) / net.lam).tolist()
    t_burn = config.burn_in_fraction * arrival_times[-1]

    svc = _std_exponential(service_rng, _BLOCK).tolist()
    svc_k = 0

    in_service = [None] * n  # generation time of the update at node i, None if idle
    token = [0] * n  # bumps on every service start; stale completions are skipped
    u = [0.0] * n  # freshest timestamp delivered by node i
    t_jump = [0.0] * n  # time of node i's latest jump
    area = [0.0] * n  # integral of age_i over [0, t_jump[i]]
    area_burn = None
    delivered = [0] * n
    preempted = [0] * n
    arrivals_in = [0] * n

    track_occ = n <= _MAX_OCCUPANCY_NODES
    occ = [0.0] * (1 << n) if track_occ else None
    state = 0
    t_last = 0.0

    if record_paths:
        rec_t = [[0.0] for _ in range(n)]
        rec_before = [[0.0] for _ in range(n)]
        rec_after = [[0.0] for _ in range(n)]
        run_t = [[] for _ in range(n)]
        run_avg = [[] for _ in range(n)]
        stamps = [[] for _ in range(n)]

    heap = [(arrival_times[0], 0, -1, 0)]
    seq = 1
    next_arrival = 1
    total = config.arrivals
    push, pop = heapq.heappush, heapq.heappop

    while heap:
        t, _, node, tok = pop(heap)
        if node >= 0 and tok != token[node]:
            continue

        if area_burn is None and t >= t_burn:
            area_burn = [
                area[i] + 0.5 * ((t_burn - u[i]) ** 2 - (t_jump[i] - u[i]) ** 2) for i in range(n)
            ]
        if track_occ:
            occ[state] += t - t_last
        t_last = t

        if node < 0:
            ts = t
            if next_arrival < total:
                push(heap, (arrival_times[next_arrival], seq, -1, 0))
                seq += 1
                next_arrival += 1
            dest = 0
        else:
            ts = in_service[node]
            in_service[node] = None
            state &= ~(1 << node)
            delivered[node] += 1
            ui = u[node]
            if ts > ui:
                tj = t_jump[node]
                area[node] += 0.5 * ((t - ui) ** 2 - (tj - ui) ** 2)
                u[node] = ts
                t_jump[node] = t
                if record_paths:
                    rec_t[node].append(t)
                    rec_before[node].append(t - ui)
                    rec_after[node].append(t - ts)
                    run_t[node].append(t)
                    run_avg[node].append(area[node] / t)
                    stamps[node].append(ts)
            dest = node + 1
            if dest == n:
                continue

        # Start service of update `ts` at node `dest`, preempting any occupant.
        arrivals_in[dest] += 1
        if in_service[dest] is not None:
            preempted[dest] += 1
        in_service[dest] = ts
        state |= 1 << dest
        token[dest] += 1
        if svc_k == _BLOCK:
            svc = _std_exponential(service_rng, _BLOCK).tolist()
            svc_k = 0
        push(heap, (t + svc[svc_k] / mu[dest], seq, dest, token[dest]))
        svc_k += 1
        seq += 1

    horizon = t_last
    total_area = [area[i] + 0.5 * ((horizon - u[i]) ** 2 - (t_jump[i] - u[i]) ** 2) for i in range(n)]
    if area_burn is None:
        area_burn = [0.0] * n
    window = horizon - t_burn
    summary = SimSummary(
        per_node_time_avg_age=[(total_area[i] - area_burn[i]) / window for i in range(n)],
        delivered=delivered,
        preempted=preempted,
        arrivals_in=arrivals_in,
        in_service_at_end=[int(s is not None) for s in in_service],
        horizon=horizon,
        burn_in_time=t_burn,
        per_node_running_avg_age=[total_area[i] / horizon for i in range(n)],
        occupancy_time=occ,
        seed=config.seed,
        arrivals=config.arrivals,
    )

    paths = []
    if record_paths:
        for i in range(n):
            if rec_t[i][-1] < horizon:
                end_age = horizon - u[i]
                rec_t[i].append(horizon)
                rec_before[i].append(end_age)
                rec_after[i].append(end_age)
                run_t[i].append(horizon)
                run_avg[i].append(total_area[i] / horizon)
            path = AgePath(
                node=i + 1,
                times=np.array(rec_t[i]),
                ages_before=np.array(rec_before[i]),
                ages_after=np.array(rec_after[i]),
                running_times=np.array(run_t[i]),
                running_average=np.array(run_avg[i]),
                update_times=np.array(stamps[i]),
            )
            if config.sample_interval is not None:
                grid = np.arange(0.0, horizon, config.sample_interval)
                path.samples = np.column_stack([grid, path.age_at(grid)])
            paths.append(path)
    return paths, summary


def occupancy_fractions(config: SimConfig) -> np.ndarray:
    """Fraction of simulated time spent in each occupancy state of a two-node line.

    State ``q = q1 + 2*q2`` with ``q_i = 1`` iff node ``i`` holds an update.
    """
    if config.network.n != 2:
        raise WrongNodeCount(f"occupancy fractions need a 2-node line, got {config.network.n}")
    _, summary = run(config, record_paths=False)
    occ = np.array(summary.occupancy_time)
    return occ / occ.sum()


@dataclass
class ReplicationResult:
    seeds: list[int]
    summaries: list[SimSummary]
    mean: np.ndarray  # per-node mean of time-average ages
    std_error: np.ndarray
    paths: list[list[AgePath]] = field(default_factory=list)

    @property
    def per_node_ages(self) -> np.ndarray:
        """(replications, n) matrix of per-run time-average ages."""
        return np.array([s.per_node_time_avg_age for s in self.summaries])


def replicate(config: SimConfig, replications: int, record_paths: bool = False) -> ReplicationResult:
    """Independent runs with seeds ``derive_seed(config.seed, r)``, r = 0..replications-1."""
    if isinstance(replications, bool) or not isinstance(replications, (int, np.integer)) or replications < 2:
        raise ConfigError(f"replications must be an integer >= 2, got {replications!r}")
    seeds = [derive_seed(config.seed, r) for r in range(replications)]
    summaries, all_paths = [], []
    for s in seeds:
        paths, summary = run(replace(config, seed=s), record_paths=record_paths)
        summaries.append(summary)
        if record_paths:
            all_paths.append(paths)
    ages = np.array([s.per_node_time_avg_age for s in summaries])
    mean = ages.mean(axis=0)
    se = ages.std(axis=0, ddof=1) / math.sqrt(replications)
    return ReplicationResult(seeds, summaries, mean, se, all_paths)
