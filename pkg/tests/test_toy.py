import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from padicnet.errors import CapacityError, DomainError
from padicnet.solver import NetworkParams, self_coupling_kernel, solve
from padicnet.toy import (
    Comparison,
    Label,
    ToyParams,
    admissible_labels,
    check_partial_order,
    closed_form_state,
    drive,
    edge_detect,
    enumerate_states,
    hasse_edges,
    laplacian_kernel,
    lattice_report,
    minimal_elements,
    order_relation,
    residual,
)
from padicnet.tree import TreeFunction, integrate

P, M = Label.PLUS, Label.MINUS
MID = Label.MID


def const(p, level, v):
    return TreeFunction.constant(p, level, v)


def test_drive():
    rng = np.random.default_rng(0)
    xi = TreeFunction(3, 2, rng.normal(size=9))
    x = TreeFunction(3, 2, rng.normal(size=9))
    assert np.array_equal(drive(ToyParams(3, 2, 0.5, xi=xi), x).coeffs, xi.coeffs)
    b = drive(ToyParams(3, 2, 0.5, W_in=const(3, 2, 1.0), xi=xi), x)
    assert np.allclose(b.coeffs, integrate(x) + xi.coeffs, rtol=1e-13)
    b0 = drive(ToyParams(3, 2, 0.5, W_in=x, xi=xi), TreeFunction.zeros(3, 2))
    assert np.array_equal(b0.coeffs, xi.coeffs)


def test_closed_form_examples():
    t = ToyParams(2, 1, 0.5)
    assert closed_form_state(t, const(2, 1, 2.0)).coeffs.tolist() == [2.5, 2.5]
    assert closed_form_state(t, const(2, 1, 0.2)).coeffs.tolist() == [0.4, 0.4]
    assert closed_form_state(ToyParams(2, 1, 1.0), const(2, 1, 0.0)).coeffs.tolist() == [0, 0]
    with pytest.raises(DomainError):
        closed_form_state(ToyParams(2, 1, 1.5), const(2, 1, 0.0))


def test_case_a_equals_one_residual():
    rng = np.random.default_rng(1)
    b = TreeFunction(3, 2, rng.normal(size=9))
    h = closed_form_state(ToyParams(3, 2, 1.0), b)
    assert residual(1.0, b, h.coeffs) <= 1e-12


@pytest.mark.parametrize("a", [0.25, 0.5, 0.9])
def test_closed_form_equals_solver(a):
    rng = np.random.default_rng(2)
    b = TreeFunction(2, 3, rng.normal(scale=1.5, size=8))
    h = closed_form_state(ToyParams(2, 3, a), b)
    net = NetworkParams(2, 0, 3, "pwl_sigmoid", W=self_coupling_kernel(2, 3, a), xi=b)
    rep = solve(net, tol=1e-12)
    assert np.max(np.abs(rep.state.coeffs - h.coeffs)) <= 1e-8


def test_admissible_boundaries():
    a = 2.0
    assert admissible_labels(a, [0.0]) == [(P, M, MID)]
    assert admissible_labels(a, [1.0]) == [(P,)]  # b = a - 1
    assert admissible_labels(a, [-1.0]) == [(M,)]  # b = 1 - a
    assert admissible_labels(a, [5.0]) == [(P,)]


def test_enumerate_small():
    ps = enumerate_states(ToyParams(2, 1, 2.0), const(2, 1, 0.0))
    assert ps.count == 9 and ps.n_states == 9 and not ps.sampled
    assert sorted(set(ps.values.ravel().tolist())) == [-2.0, 0.0, 2.0]
    assert ps.bistable_indices().size == 4
    one = enumerate_states(ToyParams(2, 1, 2.0), const(2, 1, 5.0))
    assert one.count == 1 and one.values.tolist() == [[7.0, 7.0]]
    assert minimal_elements(one).tolist() == [0]
    with pytest.raises(DomainError):
        enumerate_states(ToyParams(2, 1, 1.0), const(2, 1, 0.0))


def test_enumeration_matches_product_oracle():
    b = TreeFunction(3, 1, [0.2, 1.5, -0.3])
    ps = enumerate_states(ToyParams(3, 1, 1.8), b)
    adm = admissible_labels(1.8, b)
    ref = list(itertools.product(*adm))
    assert ps.count == len(ref) == 3 * 1 * 3
    assert sorted(map(tuple, ps.labels.tolist())) == sorted(tuple(int(v) for v in r) for r in ref)


def test_cap_and_sampling():
    b = const(2, 2, 0.0)
    none = enumerate_states(ToyParams(2, 2, 2.0), b, cap=0)
    assert none.count == 81 and none.n_states == 0
    s1 = enumerate_states(ToyParams(2, 2, 2.0), b, cap=10, seed=3)
    s2 = enumerate_states(ToyParams(2, 2, 2.0), b, cap=10, seed=3)
    assert s1.sampled and s1.n_states == 10
    assert np.array_equal(s1.labels, s2.labels)
    assert residual(2.0, b, s1.values) <= 1e-12
    with pytest.raises(DomainError):
        minimal_elements(s1)
    big = enumerate_states(ToyParams(2, 6, 2.0), const(2, 6, 0.0), cap=100)
    assert big.count == 3**64


def test_order_relation_examples():
    ps = enumerate_states(ToyParams(2, 1, 2.0), const(2, 1, 0.0))
    states = list(ps)
    top = next(s for s in states if s.labels == (MID, MID))
    for s in states:
        assert order_relation(s, s) is Comparison.EQUAL
        if s is not top:
            assert order_relation(s, top) is Comparison.LESS
            assert order_relation(top, s) is Comparison.GREATER
    bist = [s for s in states if s.bistable]
    for s, t in itertools.combinations(bist, 2):
        assert order_relation(s, t) is Comparison.INCOMPARABLE


def test_hasse_and_lattice_report():
    ps = enumerate_states(ToyParams(2, 1, 2.0), const(2, 1, 0.0))
    edges = hasse_edges(ps)
    # each of 4 bistable states covered by 2, each of 4 one-MID states by the top
    assert len(edges) == 12
    rep = lattice_report(ps)
    assert rep.pairs == 36 and rep.pairs_with_join == 36
    assert rep.pairs_with_meet < rep.pairs


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([(2, 1), (2, 2), (3, 1), (2, 3), (5, 1)]), st.floats(1.05, 3.0),
       st.integers(0, 2**32 - 1))
def test_poset_properties(shape, a, seed):
    p, level = shape
    rng = np.random.default_rng(seed)
    # mostly saturated drives keep the state count small at p^l = 8
    b = TreeFunction(p, level, rng.choice([0.0, 5.0, -5.0, 0.3 * (a - 1)], size=p**level))
    ps = enumerate_states(ToyParams(p, level, a), b)
    sizes = [len(s) for s in admissible_labels(a, b)]
    assert ps.count == ps.n_states == int(np.prod(sizes))
    assert residual(a, b, ps.values) <= 1e-12
    assert np.all(np.abs(np.clip(ps.values, -1, 1)) <= 1)
    assert check_partial_order(ps.leq_matrix()).ok
    assert np.array_equal(minimal_elements(ps), ps.bistable_indices())


def test_laplacian_zero_mean():
    k = laplacian_kernel(3, 3, 5)
    assert k.coeffs.sum() == 0.0


def test_edge_detect_constant_image():
    img = np.full((5, 5), 77, dtype=np.uint8)
    out = edge_detect(img, ToyParams(7, 2, 0.5, W_in=laplacian_kernel(7, 2, 5, 2.0)))
    assert np.all(out == 128)


def test_edge_detect_step():
    img = np.full((8, 8), 220, dtype=np.uint8)
    img[:, 4:] = 30
    out = edge_detect(img, ToyParams(2, 6, 0.5, W_in=laplacian_kernel(2, 6, 8, 2.0)))
    inner = out[1:-1]
    assert np.all(inner[:, 3] == 255) and np.all(inner[:, 4] == 0)
    assert np.all(inner[:, [1, 6]] == 128)


def test_edge_detect_no_coupling():
    rng = np.random.default_rng(4)
    img = rng.integers(0, 256, size=(4, 4)).astype(np.uint8)
    k = laplacian_kernel(2, 4, 4, 0.3)
    out = edge_detect(img, ToyParams(2, 4, 0.0, W_in=k))
    x = TreeFunction(2, 4, img.reshape(-1) / 127.5 - 1)
    b = drive(ToyParams(2, 4, 0.5, W_in=k), x).coeffs
    expect = np.clip(np.rint((np.round(np.clip(b, -1, 1), 12) + 1) * 127.5), 0, 255)
    assert np.array_equal(out.reshape(-1), expect.astype(np.uint8))


def test_edge_detect_errors():
    with pytest.raises(CapacityError):
        edge_detect(np.zeros((5, 5)), ToyParams(2, 4, 0.5))
    with pytest.raises(DomainError):
        edge_detect(np.zeros((2, 2)), ToyParams(2, 2, 1.5))
