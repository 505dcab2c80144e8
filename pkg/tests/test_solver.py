import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import random_input, random_network
from padicnet.errors import DomainError
from padicnet.solver import (
    NetworkParams,
    check_constant_state,
    constant_state_query,
    contraction_constant,
    forward_map,
    self_coupling_kernel,
    solve,
    solve_constant_scalar,
    solve_interval,
    theoretical_iteration_budget,
)
from padicnet.tree import TreeFunction, TreeKernel, apply_kernel, l2_norm, lift


def scalar_picard(a, c, f, n=500):
    alpha = 0.0
    for _ in range(n):
        alpha = a * f(alpha) + c
    return alpha


ALPHA_HALF = scalar_picard(0.5, 1.0, math.tanh)


def const_net(w, xi, phi="tanh", p=2, level=1):
    return NetworkParams(p, 0, level, phi,
                         W=TreeKernel.constant(p, level, w),
                         xi=TreeFunction.constant(p, level, xi))


def test_forward_map_examples():
    rng = np.random.default_rng(0)
    net = random_network(rng, 2, 2, 0.5).replace(W=None)
    x = random_input(rng, net)
    h = TreeFunction(2, 2, rng.normal(size=4))
    expect = apply_kernel(net.W_in.lift(2), x) + net.xi
    assert np.allclose(forward_map(net, x, h).coeffs, expect.coeffs, rtol=0, atol=0)
    zero = NetworkParams(2, 0, 2, "tanh", W=TreeKernel.constant(2, 2, 1.3))
    assert not np.any(forward_map(zero, None, TreeFunction.zeros(2, 2)).coeffs)
    out = forward_map(const_net(0.5, 1.0), None, TreeFunction.constant(2, 1, 1.0))
    assert np.allclose(out.coeffs, 0.5 * math.tanh(1) + 1, rtol=1e-15)
    assert out.coeffs[0] == pytest.approx(1.380797, abs=1e-6)


def test_solve_zero_kernel_one_step():
    rep = solve(const_net(0.0, 0.7))
    assert rep.iterations == 1
    assert rep.residual == 0.0
    assert rep.stable and rep.converged


def test_solve_constant_state():
    rep = solve(const_net(0.5, 1.0), tol=1e-12)
    assert np.allclose(rep.state.coeffs, ALPHA_HALF, atol=1e-12)
    assert ALPHA_HALF == pytest.approx(1.447610, abs=1e-6)
    assert rep.contraction_q == pytest.approx(0.5)
    assert rep.norm_bound_ok


def test_solve_unstable_reported():
    rep = solve(const_net(3.0, 1.0), max_iter=200)
    assert rep.contraction_q == pytest.approx(3.0)
    assert not rep.stable


def test_output_line():
    net = const_net(0.5, 1.0).replace(
        W_out=TreeKernel.constant(2, 1, 2.0), xi_out=TreeFunction.constant(2, 1, -1.0))
    rep = solve(net, tol=1e-13)
    assert np.allclose(rep.output.coeffs, 2 * rep.state.coeffs.mean() - 1, rtol=1e-13)


def test_contraction_constant_examples():
    assert contraction_constant(const_net(-0.8, 0)) == pytest.approx(0.8, rel=1e-15)
    assert contraction_constant(const_net(0.0, 0)) == 0.0
    assert contraction_constant(const_net(0.99, 0, "pwl_sigmoid")) == pytest.approx(0.99, rel=1e-15)


def test_contraction_constant_diagonal_kernel():
    net = NetworkParams(3, 0, 2, "pwl_sigmoid", W=self_coupling_kernel(3, 2, 0.9))
    assert contraction_constant(net) == pytest.approx(0.9, rel=1e-15)


def test_tol_must_be_positive():
    with pytest.raises(DomainError):
        solve(const_net(0.1, 0.1), tol=0)


def test_check_constant_state_examples():
    net = NetworkParams(2, 0, 1, "tanh", xi=TreeFunction.constant(2, 1, 0.7))
    assert check_constant_state(net, None, 0.7)
    toy = NetworkParams(2, 0, 1, "pwl_sigmoid", W=self_coupling_kernel(2, 1, 2.0))
    assert check_constant_state(toy, None, 2.0)
    assert not check_constant_state(toy, None, 0.5)
    q = constant_state_query(toy, None, 0.5, 1e-12)
    assert np.allclose(q.rowsum.coeffs, 2.0)
    assert q.deviation == pytest.approx(0.5)


def test_check_constant_state_from_solve():
    net = const_net(0.5, 1.0)
    assert check_constant_state(net, None, ALPHA_HALF, tol=1e-12)


def test_solve_constant_scalar():
    assert solve_constant_scalar(0.0, 5.0) == 5.0
    assert solve_constant_scalar(0.5, 1.0, "tanh") == pytest.approx(ALPHA_HALF, abs=1e-13)
    assert solve_constant_scalar(0.5, 0.0, "pwl_sigmoid") == 0.0
    for a, c in [(2.0, 0.3), (3.0, -5.0), (1.5, 0.0)]:
        alpha = solve_constant_scalar(a, c, "pwl_sigmoid")
        assert abs(alpha - a * np.clip(alpha, -1, 1) - c) < 1e-13


def test_iteration_budget():
    assert theoretical_iteration_budget(0.5, 1.0, 2.0) == 0
    assert theoretical_iteration_budget(0.5, 1.0, 1e-6) == math.ceil(math.log2(2e6)) == 21
    assert theoretical_iteration_budget(1e-300, 1.0, 0.5) == 1
    assert theoretical_iteration_budget(0.0, 1.0, 0.5) == 1
    with pytest.raises(DomainError):
        theoretical_iteration_budget(1.0, 1.0, 1e-3)


def test_interval_solver():
    z = solve_interval(np.zeros((5, 5)), "tanh", 4)
    assert not np.any(z.values)
    for N in (4, 7, 64):
        s = solve_interval(lambda x, y: 0.5 + 0 * x * y, "tanh", N, c=1.0)
        assert s.converged
        assert np.allclose(s.values, solve_constant_scalar(0.5, 1.0, "tanh"), rtol=0, atol=1e-12)
    a = solve_interval(lambda x, y: 0.5 + 0 * x * y, "tanh", 8, c=1.0).values
    b = solve_interval(lambda x, y: 0.5 + 0 * x * y, "tanh", 16, c=1.0).values
    assert np.allclose(a, b[::2], atol=1e-12)


def test_params_validation_and_json():
    rng = np.random.default_rng(1)
    net = random_network(rng, 3, 2, 0.4)
    back = NetworkParams.from_dict(net.to_dict())
    assert np.array_equal(back.W.coeffs, net.W.coeffs)
    assert back.phi is net.phi and back.L == net.L
    with pytest.raises(DomainError):
        NetworkParams(2, 0, 1, W=TreeKernel.zeros(2, 2))
    with pytest.raises(DomainError):
        NetworkParams(4, 0, 1)
    with pytest.raises(DomainError):
        NetworkParams(2, 0, 1, xi=TreeFunction.zeros(3, 1))


seeds = st.integers(0, 2**32 - 1)
shapes = st.sampled_from([(2, 1), (2, 3), (3, 2), (5, 1), (2, 5)])


@settings(max_examples=30, deadline=None)
@given(shapes, st.floats(0.05, 0.95), seeds)
def test_contraction_inequality(shape, q, seed):
    rng = np.random.default_rng(seed)
    net = random_network(rng, *shape, q)
    x = random_input(rng, net)
    n = shape[0] ** shape[1]
    h1, h2 = (TreeFunction(shape[0], shape[1], rng.normal(scale=3, size=n)) for _ in range(2))
    lhs = l2_norm(forward_map(net, x, h1) - forward_map(net, x, h2))
    assert lhs <= contraction_constant(net) * l2_norm(h1 - h2) + 1e-10


@settings(max_examples=30, deadline=None)
@given(shapes, st.floats(0.05, 0.95), seeds)
def test_geometric_convergence_and_residual(shape, q, seed):
    rng = np.random.default_rng(seed)
    net = random_network(rng, *shape, q)
    rep = solve(net, random_input(rng, net), tol=1e-10)
    assert rep.converged and rep.residual <= 1e-10
    d = np.array(rep.history)
    big = d[:-1] > 1e-12
    assert np.all(d[1:][big] / d[:-1][big] <= rep.contraction_q + 1e-9)
    assert rep.norm_bound_ok


@settings(max_examples=20, deadline=None)
@given(shapes, st.floats(0.05, 0.9), seeds)
def test_level_consistency(shape, q, seed):
    rng = np.random.default_rng(seed)
    net = random_network(rng, *shape, q)
    x = random_input(rng, net)
    lo = solve(net, x, tol=1e-14)
    hi = solve(net.lift(net.level + 1), x, tol=1e-14)
    assert np.max(np.abs(lift(lo.state, net.level + 1).coeffs - hi.state.coeffs)) <= 1e-12


@settings(max_examples=20, deadline=None)
@given(shapes, st.floats(0.05, 0.9), seeds)
def test_continuity_in_bias(shape, q, seed):
    rng = np.random.default_rng(seed)
    net = random_network(rng, *shape, q)
    x = random_input(rng, net)
    delta = TreeFunction(net.p, net.level, rng.normal(scale=0.1, size=net.W.size))
    a = solve(net, x, tol=1e-13).state
    b = solve(net.replace(xi=net.xi + delta), x, tol=1e-13).state
    assert l2_norm(a - b) <= l2_norm(delta) / (1 - contraction_constant(net)) + 1e-9
