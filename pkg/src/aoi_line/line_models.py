"""SHS models of a line of preemptive memoryless servers, and their closed forms.

Updates arrive at node 1 as a Poisson process of rate ``lam`` and pass
through nodes ``1..n``; node ``i`` serves for an exponential time of rate
``mu[i-1]`` and an arrival preempts whatever is in service.  Age component
0 is the age at the monitor (the output of node ``n``).
"""

from __future__ import annotations

from dataclasses import dataclass
from math import isfinite

import numpy as np

from .shs import AgeSolution, ShsModel, Transition

__all__ = [
    "ConfigError",
    "WrongNodeCount",
    "LineNetworkConfig",
    "build_two_node",
    "build_fake_update",
    "closed_form_age",
    "closed_form_node_ages",
    "two_node_stationary",
    "fake_update_node_ages",
]


class ConfigError(ValueError):
    pass


class WrongNodeCount(ConfigError):
    pass


@dataclass(frozen=True)
class LineNetworkConfig:
    lam: float
    mu: tuple[float, ...]

    def __post_init__(self):
        try:
            mu = tuple(float(m) for m in self.mu)
            lam = float(self.lam)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"rates must be numbers: {exc}") from None
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "lam", lam)
        if not (isfinite(lam) and lam > 0):
            raise ConfigError(f"arrival rate must be positive and finite, got {lam}")
        if not mu:
            raise ConfigError("at least one service rate is required")
        for i, m in enumerate(mu, start=1):
            if not (isfinite(m) and m > 0):
                raise ConfigError(f"service rate of node {i} must be positive and finite, got {m}")

    @property
    def n(self) -> int:
        return len(self.mu)


# Reset matrices of the two-node chain, indexed by transition number.  States are
# q = q1 + 2*q2 where q_i = 1 iff node i holds an update.
_TWO_NODE_RESETS = {
    1: [[1, 0, 0], [0, 0, 0], [0, 0, 0]],  # (x0, 0, 0)
    2: [[1, 0, 0], [0, 0, 0], [0, 0, 0]],  # (x0, 0, 0)
    3: [[1, 0, 0], [0, 0, 1], [0, 0, 0]],  # (x0, 0, x1)
    4: [[0, 0, 0], [0, 0, 0], [1, 0, 0]],  # (x2, 0, 0)
    5: [[1, 0, 0], [0, 0, 0], [0, 0, 1]],  # (x0, 0, x2)
    6: [[0, 0, 0], [0, 1, 0], [1, 0, 0]],  # (x2, x1, 0)
    7: [[1, 0, 0], [0, 0, 1], [0, 0, 0]],  # (x0, 0, x1)
    8: [[1, 0, 0], [0, 0, 0], [0, 0, 1]],  # (x0, 0, x2)
}


def build_two_node(config: LineNetworkConfig) -> ShsModel:
    """Four-state occupancy model of a two-node line.

    ``transitions[l - 1]`` is row ``l`` of the transition table.
    """
    if config.n != 2:
        raise WrongNodeCount(f"two-node model needs exactly 2 service rates, got {config.n}")
    lam = config.lam
    mu1, mu2 = config.mu
    edges = [
        (0, 1, lam),
        (1, 1, lam),
        (1, 2, mu1),
        (2, 0, mu2),
        (2, 3, lam),
        (3, 1, mu2),
        (3, 2, mu1),
        (3, 3, lam),
    ]
    transitions = [
        Transition(src, dst, rate, np.array(_TWO_NODE_RESETS[l]))
        for l, (src, dst, rate) in enumerate(edges, start=1)
    ]
    # x0 always grows; x_i grows only while node i is busy.
    growth = np.array([[1, 0, 0], [1, 1, 0], [1, 0, 1], [1, 1, 1]])
    return ShsModel(4, 3, transitions, growth, labels=("00", "10", "01", "11"))


def build_fake_update(config: LineNetworkConfig) -> ShsModel:
    """Single-state model in which a departing update leaves a fake copy behind.

    Component ``k >= 1`` is the age of the (real or fake) update at node
    ``k``; transition 0 is an arrival at node 1 and transition ``l >= 1`` a
    departure from node ``l``.
    """
    n = config.n
    d = n + 1
    transitions = []

    # Every reset starts from the identity.  Arrival: column 1 cleared (x1' = 0).
    A = np.eye(d, dtype=int)
    A[1, 1] = 0
    transitions.append(Transition(0, 0, config.lam, A))

    # Departure from node l < n: column l+1 takes row l (x'_{l+1} = x_l); x_l is kept.
    for l in range(1, n):
        A = np.eye(d, dtype=int)
        A[l + 1, l + 1] = 0
        A[l, l + 1] = 1
        transitions.append(Transition(0, 0, config.mu[l - 1], A))

    # Delivery from node n: column 0 takes row n and loses its diagonal.
    A = np.eye(d, dtype=int)
    A[0, 0] = 0
    A[n, 0] = 1
    transitions.append(Transition(0, 0, config.mu[n - 1], A))

    return ShsModel(1, d, transitions, np.ones((1, d)), labels=("0",))


def closed_form_age(config: LineNetworkConfig) -> float:
    """Average age at the monitor, ``1/lam + sum(1/mu_i)``."""
    return 1.0 / config.lam + sum(1.0 / m for m in config.mu)


def closed_form_node_ages(config: LineNetworkConfig) -> list[float]:
    """Average age at the output of each node ``i``: ``1/lam + sum_{k<=i} 1/mu_k``."""
    ages = []
    acc = 1.0 / config.lam
    for m in config.mu:
        acc += 1.0 / m
        ages.append(acc)
    return ages


def two_node_stationary(config: LineNetworkConfig) -> np.ndarray:
    """Closed-form occupancy probabilities of the two-node chain, states 0..3."""
    if config.n != 2:
        raise WrongNodeCount(f"expected 2 service rates, got {config.n}")
    lam = config.lam
    mu1, mu2 = config.mu
    p0 = mu1 * mu2 / ((mu1 + lam) * (mu2 + lam))
    p1 = lam / mu1 * (mu1 + mu2 + lam) / (mu1 + mu2) * p0
    p2 = lam / mu2 * p0
    p3 = lam**2 / (mu2 * (mu1 + mu2)) * p0
    return np.array([p0, p1, p2, p3])


def fake_update_node_ages(solution: AgeSolution) -> list[float]:
    """Per-node output ages read off a solved fake-update model.

    The output of node ``i < n`` is the input of node ``i + 1`` (component
    ``i + 1``); the output of node ``n`` is the monitor (component 0).
    """
    means = solution.v.sum(axis=0)
    n = len(means) - 1
    return [float(means[i + 1]) for i in range(1, n)] + [float(means[0])]
