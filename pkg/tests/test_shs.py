import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aoi_line.line_models import LineNetworkConfig, build_fake_update, build_two_node
from aoi_line.shs import (
    IndexOutOfRange,
    InvalidModel,
    NegativeSolution,
    ReducibleChain,
    ShsModel,
    SingularSystem,
    Transition,
    age_components,
    balance_residual,
    moment_system,
    solve_age,
    stationary_distribution,
    validate_model,
)

from .oracles import shs_monte_carlo, stationary_by_expm

rates = st.floats(min_value=0.1, max_value=10.0)


def two_node(lam=1.0, mu1=1.0, mu2=1.0):
    return build_two_node(LineNetworkConfig(lam, (mu1, mu2)))


def single_state(transitions, d=1):
    return ShsModel(1, d, transitions, np.ones((1, d)))


# -- validate_model ------------------------------------------------------------


def test_two_node_model_is_valid():
    assert validate_model(two_node()) == []


def test_zero_rate_is_one_violation():
    model = two_node()
    trs = list(model.transitions)
    trs[3] = Transition(2, 0, 0.0, trs[3].reset)
    problems = validate_model(model.with_transitions(trs))
    assert len(problems) == 1
    assert "transition 3" in problems[0] and "rate" in problems[0]


def test_non_binary_reset_is_one_violation():
    model = two_node()
    trs = list(model.transitions)
    bad = np.array(trs[0].reset)
    bad[1, 2] = 2
    trs[0] = Transition(0, 1, 1.0, bad)
    problems = validate_model(model.with_transitions(trs))
    assert len(problems) == 1
    assert "reset[1][2]" in problems[0]


def test_bad_index_and_shape_and_growth():
    growth = np.array([[1, 0], [0.5, 1]])
    model = ShsModel(2, 2, [Transition(0, 5, 1.0, np.eye(2)), Transition(1, 0, 1.0, np.eye(3))], growth)
    problems = validate_model(model)
    assert any("dest index 5" in p for p in problems)
    assert any("shape" in p for p in problems)
    assert any("growth[1][0]" in p for p in problems)


def test_invalid_model_raises_on_solve():
    model = single_state([Transition(0, 0, -1.0, np.zeros((1, 1)))])
    with pytest.raises(InvalidModel):
        solve_age(model)


# -- stationary_distribution ------------------------------------------------------


def test_two_node_unit_rates_stationary():
    # Hand substitution into the closed-form occupancy law at lam = mu1 = mu2 = 1.
    pi = stationary_distribution(two_node()).probs
    np.testing.assert_allclose(pi, [1 / 4, 3 / 8, 1 / 4, 1 / 8], atol=1e-12)


def test_single_state_is_trivial():
    assert stationary_distribution(build_fake_update(LineNetworkConfig(1, (1, 0.5, 0.25)))).probs.tolist() == [1.0]
    model = single_state([Transition(0, 0, 3.0, np.eye(1)), Transition(0, 0, 0.2, np.zeros((1, 1)))])
    assert stationary_distribution(model).probs.tolist() == [1.0]


def test_reducible_chain_detected():
    A = np.eye(1)
    model = ShsModel(3, 1, [Transition(0, 1, 1.0, A), Transition(1, 0, 1.0, A), Transition(1, 2, 1.0, A)], np.ones((3, 1)))
    with pytest.raises(ReducibleChain):
        stationary_distribution(model)


def test_self_loops_do_not_make_a_chain_irreducible():
    A = np.eye(1)
    model = ShsModel(2, 1, [Transition(0, 0, 1.0, A), Transition(1, 1, 1.0, A), Transition(0, 1, 1.0, A)], np.ones((2, 1)))
    with pytest.raises(ReducibleChain):
        stationary_distribution(model)


@given(lam=rates, mu1=rates, mu2=rates)
def test_stationary_matches_expm_oracle(lam, mu1, mu2):
    model = two_node(lam, mu1, mu2)
    pi = stationary_distribution(model).probs
    # expm over a horizon of 200/slowest-rate is converged to machine precision.
    ref = stationary_by_expm(model, horizon=400.0 / min(lam, mu1, mu2))
    np.testing.assert_allclose(pi, ref, atol=1e-9)
    assert abs(pi.sum() - 1) < 1e-12
    assert np.all(pi >= 0)
    assert balance_residual(model, pi) < 1e-10


# -- solve_age ------------------------------------------------------------------------


def test_two_node_delta_matches_three_term_sum():
    assert solve_age(two_node(1.0, 1.0, 0.5)).delta == pytest.approx(4.0, abs=1e-12)


def test_fake_update_three_nodes_delta():
    sol = solve_age(build_fake_update(LineNetworkConfig(1.0, (1.0, 0.5, 0.25))))
    assert sol.delta == pytest.approx(8.0, abs=1e-12)


def test_idle_state_irrelevant_components_zero():
    v = solve_age(two_node()).v
    assert v[0, 1] == 0.0 and v[0, 2] == 0.0


@given(lam=rates, mu1=rates, mu2=rates)
def test_two_node_solution_satisfies_reduced_equations(lam, mu1, mu2):
    # The eight surviving scalar equations of the two-node moment system, written out by hand.
    sol = solve_age(two_node(lam, mu1, mu2))
    p, v = sol.pi.probs, sol.v
    eqs = [
        v[0, 0] * lam - (p[0] + mu2 * v[2, 2]),
        v[1, 0] * mu1 - (p[1] + lam * v[0, 0] + mu2 * v[3, 2]),
        v[1, 1] * (lam + mu1) - (p[1] + mu2 * v[3, 1]),
        v[2, 0] * (lam + mu2) - (p[2] + mu1 * v[1, 0] + mu1 * v[3, 0]),
        v[2, 2] * (lam + mu2) - (p[2] + mu1 * v[1, 1] + mu1 * v[3, 1]),
        v[3, 0] * (mu1 + mu2) - (p[3] + lam * v[2, 0]),
        v[3, 1] * (lam + mu1 + mu2) - p[3],
        v[3, 2] * (mu1 + mu2) - (p[3] + lam * v[2, 2]),
    ]
    np.testing.assert_allclose(eqs, 0.0, atol=1e-9)
    for q, j in [(0, 1), (0, 2), (1, 2), (2, 1)]:
        assert abs(v[q, j]) <= 1e-12


def test_moment_residual_and_delta_definition():
    model = two_node(0.7, 2.0, 0.3)
    sol = solve_age(model)
    M, r = moment_system(model, sol.pi)
    assert np.max(np.abs(M @ sol.v.ravel() - r)) < 1e-9
    assert sol.delta == sol.v[:, 0].sum()
    assert np.all(sol.v >= 0)


def test_two_node_solution_agrees_with_sample_path_average():
    model = two_node(1.0, 1.0, 0.5)
    means = shs_monte_carlo(model, t_end=40_000.0, seed=3)
    sol = solve_age(model)
    assert means[0] == pytest.approx(sol.delta, rel=0.03)


def test_unreset_component_is_singular():
    # x0 grows forever: the only transition keeps it, so no stationary mean exists.
    model = single_state([Transition(0, 0, 1.0, np.eye(1))])
    with pytest.raises(SingularSystem):
        solve_age(model)


def test_doubling_reset_gives_negative_solution():
    # x' = (x0 + x1, x0 + x1) doubles the total age on every event: unstable.
    model = single_state([Transition(0, 0, 1.0, np.ones((2, 2)))], d=2)
    with pytest.raises(NegativeSolution) as info:
        solve_age(model)
    np.testing.assert_allclose(info.value.v, [[-1.0, -1.0]])


# -- age_components ---------------------------------------------------------------------


def test_age_components_examples():
    sol = solve_age(build_fake_update(LineNetworkConfig(1.0, (1.0, 0.5, 0.25))))
    assert age_components(sol, 1) == pytest.approx(1.0, abs=1e-12)
    assert age_components(sol, 3) == pytest.approx(4.0, abs=1e-12)
    assert age_components(sol, 0) == pytest.approx(sol.delta, abs=0)
    with pytest.raises(IndexOutOfRange):
        age_components(sol, 4)
    with pytest.raises(IndexError):
        age_components(sol, -1)


# -- invariants ------------------------------------------------------------------------------


@given(lam=rates, mu1=rates, mu2=rates, state=st.integers(0, 3), rate=rates)
def test_identity_self_transition_is_a_no_op(lam, mu1, mu2, state, rate):
    model = two_node(lam, mu1, mu2)
    extra = model.with_transitions([*model.transitions, Transition(state, state, rate, np.eye(3))])
    a, b = solve_age(model), solve_age(extra)
    np.testing.assert_allclose(b.pi.probs, a.pi.probs, atol=1e-12)
    np.testing.assert_allclose(b.v, a.v, atol=1e-9)
    assert b.delta == pytest.approx(a.delta, abs=1e-9)


@given(lam=rates, mu1=rates, mu2=rates, c=st.floats(min_value=0.01, max_value=100.0))
def test_rate_scaling_law(lam, mu1, mu2, c):
    model = two_node(lam, mu1, mu2)
    a, b = solve_age(model), solve_age(model.scaled(c))
    np.testing.assert_allclose(b.pi.probs, a.pi.probs, atol=1e-12)
    np.testing.assert_allclose(b.v, a.v / c, rtol=1e-9, atol=1e-12)
    assert b.delta == pytest.approx(a.delta / c, rel=1e-9)


@given(lam=rates, mus=st.lists(rates, min_size=1, max_size=6))
def test_fake_update_solution_non_negative(lam, mus):
    sol = solve_age(build_fake_update(LineNetworkConfig(lam, mus)))
    assert np.all(sol.v >= 0)
    assert sol.residual < 1e-9


def test_models_are_immutable():
    model = two_node()
    with pytest.raises(ValueError):
        model.growth[0, 0] = 5
    with pytest.raises(ValueError):
        model.transitions[0].reset[0, 0] = 0
