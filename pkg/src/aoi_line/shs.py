"""Piecewise-linear stochastic hybrid system (SHS) models of age processes.

A model is a finite continuous-time Markov chain whose transitions carry
binary reset matrices acting on a row vector of age components ``x``
(``x' = x @ A``), plus a binary growth vector per discrete state.  The
stationary first moments ``v[q] = lim E[x(t) 1{q(t) = q}]`` solve a linear
system; the average age is the sum of their component 0 over states.

Unknowns of the moment system are ordered state-major, i.e. ``v[q, j]`` is
unknown number ``q * age_dim + j``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.sparse import csr_array
from scipy.sparse.csgraph import connected_components

__all__ = [
    "ShsError",
    "InvalidModel",
    "ReducibleChain",
    "SingularSystem",
    "NegativeSolution",
    "IndexOutOfRange",
    "Transition",
    "ShsModel",
    "StationaryDistribution",
    "AgeSolution",
    "validate_model",
    "stationary_distribution",
    "moment_system",
    "solve_age",
    "age_components",
]

NEGATIVE_TOL = 1e-12
MOMENT_RESIDUAL_TOL = 1e-9
# Reciprocal condition numbers below this are treated as rank deficient.
RCOND_MIN = 1e-13


class ShsError(Exception):
    """Base class for solver failures."""


class InvalidModel(ShsError, ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid SHS model: " + "; ".join(self.violations))


class ReducibleChain(ShsError):
    pass


class SingularSystem(ShsError):
    pass


class NegativeSolution(ShsError):
    def __init__(self, message, v=None):
        super().__init__(message)
        self.v = v


class IndexOutOfRange(ShsError, IndexError):
    pass


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Transition:
    """Directed edge ``source -> dest`` firing at ``rate`` with reset ``x' = x @ reset``."""

    source: int
    dest: int
    rate: float
    reset: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "reset", _frozen(self.reset))


@dataclass(frozen=True)
class ShsModel:
    state_count: int
    age_dim: int
    transitions: tuple[Transition, ...]
    growth: np.ndarray  # shape (state_count, age_dim)
    labels: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "transitions", tuple(self.transitions))
        object.__setattr__(self, "growth", _frozen(self.growth))
        object.__setattr__(self, "labels", tuple(self.labels))

    def with_transitions(self, transitions) -> ShsModel:
        return ShsModel(self.state_count, self.age_dim, tuple(transitions), self.growth, self.labels)

    def scaled(self, c: float) -> ShsModel:
        """Same chain with every rate multiplied by ``c`` (a change of time unit)."""
        return self.with_transitions(
            Transition(t.source, t.dest, t.rate * c, t.reset) for t in self.transitions
        )


@dataclass(frozen=True)
class StationaryDistribution:
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _frozen(self.probs))

    def __getitem__(self, q):
        return self.probs[q]

    def __len__(self):
        return len(self.probs)


@dataclass(frozen=True)
class AgeSolution:
    pi: StationaryDistribution
    v: np.ndarray  # shape (state_count, age_dim)
    delta: float
    residual: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "v", _frozen(self.v))


def _is_binary(a) -> np.ndarray:
    return (a == 0) | (a == 1)


def validate_model(model: ShsModel) -> list[str]:
    """Return every well-formedness violation of ``model``; empty means valid."""
    problems = []
    m, d = model.state_count, model.age_dim
    if not isinstance(m, (int, np.integer)) or m < 1:
        problems.append(f"state_count must be a positive integer, got {m!r}")
    if not isinstance(d, (int, np.integer)) or d < 1:
        problems.append(f"age_dim must be a positive integer, got {d!r}")
    if problems:
        return problems

    growth = model.growth
    if growth.shape != (m, d):
        problems.append(f"growth has shape {growth.shape}, expected {(m, d)}")
    else:
        for q, j in zip(*np.nonzero(~_is_binary(growth))):
            problems.append(f"growth[{q}][{j}] = {growth[q, j]!r} is not 0 or 1")

    for idx, tr in enumerate(model.transitions):
        where = f"transition {idx} ({tr.source}->{tr.dest})"
        for name, s in (("source", tr.source), ("dest", tr.dest)):
            if not isinstance(s, (int, np.integer)) or not 0 <= s < m:
                problems.append(f"{where}: {name} index {s!r} outside 0..{m - 1}")
        rate = tr.rate
        if not (np.isfinite(rate) and rate > 0):
            problems.append(f"{where}: rate {rate!r} must be positive and finite")
        A = tr.reset
        if A.shape != (d, d):
            problems.append(f"{where}: reset has shape {A.shape}, expected {(d, d)}")
            continue
        for i, j in zip(*np.nonzero(~_is_binary(A))):
            problems.append(f"{where}: reset[{i}][{j}] = {A[i, j]!r} is not 0 or 1")
    return problems


def _require_valid(model):
    problems = validate_model(model)
    if problems:
        raise InvalidModel(problems)


def generator_matrix(model: ShsModel) -> np.ndarray:
    """CTMC generator of the discrete state; self-transitions are dropped."""
    m = model.state_count
    Q = np.zeros((m, m))
    for tr in model.transitions:
        if tr.source != tr.dest:
            Q[tr.source, tr.dest] += tr.rate
    Q[np.diag_indices(m)] = -Q.sum(axis=1)
    return Q


def _check_irreducible(model):
    m = model.state_count
    if m == 1:
        return
    rows = [t.source for t in model.transitions if t.source != t.dest]
    cols = [t.dest for t in model.transitions if t.source != t.dest]
    graph = csr_array((np.ones(len(rows)), (rows, cols)), shape=(m, m))
    ncomp, labels = connected_components(graph, directed=True, connection="strong")
    if ncomp != 1:
        groups = [np.flatnonzero(labels == c).tolist() for c in range(ncomp)]
        raise ReducibleChain(f"discrete chain is not irreducible; classes {groups}")


def _solve_dense(M, rhs, what):
    try:
        with warnings.catch_warnings():
            # Exact singularity is reported through rcond below.
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(M, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SingularSystem(f"{what}: {exc}") from exc
    norm1 = np.abs(M).sum(axis=0).max()
    rcond = scipy.linalg.lapack.dgecon(lu, norm1, norm="1")[0] if norm1 > 0 else 0.0
    if not rcond > RCOND_MIN:
        raise SingularSystem(f"{what}: matrix is singular (rcond={rcond:.3g})")
    return scipy.linalg.lu_solve((lu, piv), rhs)


def stationary_distribution(model: ShsModel) -> StationaryDistribution:
    """Stationary probabilities of the discrete chain.

    The balance equation of the highest-index state is replaced by the
    normalization constraint.
    """
    _require_valid(model)
    _check_irreducible(model)
    m = model.state_count
    A = generator_matrix(model).T.copy()
    A[m - 1, :] = 1.0
    rhs = np.zeros(m)
    rhs[m - 1] = 1.0
    pi = _solve_dense(A, rhs, "stationary balance equations")
    if np.any(pi < -NEGATIVE_TOL):
        raise SingularSystem(f"stationary solve produced negative probabilities {pi}")
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    return StationaryDistribution(pi)


def balance_residual(model: ShsModel, pi) -> float:
    """Max-norm residual of ``pi_q * out_rate(q) = sum_in rate * pi_src``."""
    probs = np.asarray(getattr(pi, "probs", pi))
    lhs = np.zeros(model.state_count)
    rhs = np.zeros(model.state_count)
    for tr in model.transitions:
        lhs[tr.source] += tr.rate * probs[tr.source]
        rhs[tr.dest] += tr.rate * probs[tr.source]
    return float(np.max(np.abs(lhs - rhs)))


def moment_system(model: ShsModel, pi) -> tuple[np.ndarray, np.ndarray]:
    """Dense matrix ``M`` and right-hand side ``r`` with ``M @ vec(v) = r``.

    Block row ``q`` encodes
    ``v[q] * sum_{out of q} rate = growth[q] * pi[q] + sum_{into q} rate * v[src] @ A``.
    Outgoing and incoming sums both include self-transitions.
    """
    probs = np.asarray(getattr(pi, "probs", pi))
    m, d = model.state_count, model.age_dim
    M = np.zeros((m * d, m * d))
    for tr in model.transitions:
        q, s = tr.dest, tr.source
        src = np.arange(s * d, (s + 1) * d)
        dst = np.arange(q * d, (q + 1) * d)
        M[src, src] += tr.rate
        # (v_s @ A)_j = sum_i v_s[i] A[i, j]; equation (q, j) column (s, i) gets A[i, j].
        M[np.ix_(dst, src)] -= tr.rate * tr.reset.T
    r = (model.growth * probs[:, None]).ravel()
    return M, r


def solve_age(model: ShsModel, pi: StationaryDistribution | None = None) -> AgeSolution:
    """Stationary age moments and average age of ``model``.

    Raises SingularSystem when the moment equations have no unique solution
    and NegativeSolution when the unique solution has a component below
    ``-1e-12``; in the latter case the age process is not stable and the
    sum of component 0 is not an average age.
    """
    if pi is None:
        pi = stationary_distribution(model)
    else:
        _require_valid(model)
    m, d = model.state_count, model.age_dim
    M, r = moment_system(model, pi)
    x = _solve_dense(M, r, "age moment equations")
    residual = float(np.max(np.abs(M @ x - r))) if x.size else 0.0
    if not residual < MOMENT_RESIDUAL_TOL:
        raise SingularSystem(f"age moment solve residual {residual:.3g} exceeds tolerance")
    v = x.reshape(m, d)
    if np.any(v < -NEGATIVE_TOL):
        bad = [(int(q), int(j)) for q, j in zip(*np.nonzero(v < -NEGATIVE_TOL))]
        raise NegativeSolution(f"negative age moments at (state, component) {bad}", v=v)
    v = np.where(v < 0, 0.0, v)
    delta = float(v[:, 0].sum())
    return AgeSolution(pi=pi, v=v, delta=delta, residual=residual)


def age_components(solution: AgeSolution, k: int) -> float:
    """Stationary mean ``E[x_k]``, the sum of ``v[q, k]`` over states."""
    d = solution.v.shape[1]
    if not 0 <= k < d:
        raise IndexOutOfRange(f"component {k} outside 0..{d - 1}")
    return float(solution.v[:, k].sum())
