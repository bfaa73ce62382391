import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from surropt.adgraph import (
    EvaluationError,
    ExprGraph,
    GraphError,
    fd_check,
)


def make_product_graph():
    g = ExprGraph(2)
    g.add_root(g.mul(g.var(0), g.var(1)))
    g.seal()
    return g


def test_evaluate_product():
    g = make_product_graph()
    assert g.evaluate([2.0, 3.0]) == pytest.approx([6.0])


def test_evaluate_tanh_of_zero_product():
    g = ExprGraph(1)
    g.add_root(g.tanh(g.mul(g.constant(0.0), g.var(0))))
    g.seal()
    for x in (-3.0, 0.0, 7.5):
        assert g.evaluate([x])[0] == 0.0


def test_evaluate_tanh():
    g = ExprGraph(1)
    g.add_root(g.tanh(g.var(0)))
    g.seal()
    assert g.evaluate([1.0])[0] == pytest.approx(0.7615941559557649, abs=1e-12)


def test_jacobian_product_rule():
    g = make_product_graph()
    pat, vals = g.jacobian([2.0, 3.0])
    entries = dict(zip(zip(pat.rows.tolist(), pat.cols.tolist()), vals))
    assert entries == {(0, 0): pytest.approx(3.0), (0, 1): pytest.approx(2.0)}


def test_jacobian_tanh_at_zero():
    g = ExprGraph(1)
    g.add_root(g.tanh(g.var(0)))
    g.seal()
    _, vals = g.jacobian([0.0])
    assert vals[0] == pytest.approx(1.0)


def test_jacobian_sigmoid_at_zero():
    g = ExprGraph(1)
    g.add_root(g.sigmoid(g.var(0)))
    g.seal()
    _, vals = g.jacobian([0.0])
    # sigma'(0) = sigma(0) (1 - sigma(0)) = 0.25
    assert vals[0] == pytest.approx(0.25, abs=1e-14)


def test_hessian_square():
    g = ExprGraph(1)
    g.add_root(g.square(g.var(0)))
    g.seal()
    pat, vals = g.hessian_lagrangian([1.3], 1.0, [])
    assert pat.as_set() == {(0, 0)}
    assert vals[0] == pytest.approx(2.0)


def test_hessian_tanh_at_zero():
    g = ExprGraph(1)
    g.add_root(g.tanh(g.var(0)))
    g.seal()
    _, vals = g.hessian_lagrangian([0.0], 1.0, [])
    assert vals[0] == pytest.approx(0.0, abs=1e-14)


def test_hessian_mixed_terms():
    # x0*x1 + x1^2 -> d2/dx1dx0 = 1, d2/dx1^2 = 2
    g = ExprGraph(2)
    g.add_root(g.add(g.mul(g.var(0), g.var(1)), g.square(g.var(1))))
    g.seal()
    pat, vals = g.hessian_lagrangian([0.4, -0.7], 1.0, [])
    entries = dict(zip(zip(pat.rows.tolist(), pat.cols.tolist()), vals))
    assert entries[(1, 0)] == pytest.approx(1.0)
    assert entries[(1, 1)] == pytest.approx(2.0)
    # the symbolic pattern may carry a structural (0, 0) slot; its value is 0
    assert entries.get((0, 0), 0.0) == pytest.approx(0.0)


def test_multiplier_weighting():
    g = ExprGraph(1)
    g.add_root(g.constant(0.0))          # stand-in objective
    g.add_root(g.square(g.var(0)))       # constraint root
    g.seal()
    _, vals = g.hessian_lagrangian([2.0], 1.0, [3.0])
    assert vals[0] == pytest.approx(6.0)
    _, vals = g.hessian_lagrangian([2.0], 1.0, [0.0])
    assert vals[0] == 0.0


def test_pattern_point_independent():
    g = ExprGraph(3)
    r = g.add(g.mul(g.var(0), g.var(1)), g.tanh(g.var(2)))
    g.add_root(r)
    g.seal()
    p1, _ = g.jacobian([0.1, 0.2, 0.3])
    p2, _ = g.jacobian([-5.0, 2.0, 9.0])
    assert p1 is p2
    h1, _ = g.hessian_lagrangian([0.1, 0.2, 0.3], 1.0, [])
    h2, _ = g.hessian_lagrangian([4.0, -1.0, 0.0], 1.0, [])
    assert h1 is h2


def test_affine_graph_empty_hessian():
    g = ExprGraph(3)
    two = g.constant(2.0)
    expr = g.add(g.mul(two, g.var(0)), g.sub(g.var(1), g.var(2)))
    g.add_root(expr)
    g.add_root(g.neg(g.var(1)))
    g.seal()
    assert len(g.hessian_pattern) == 0


def test_determinism():
    g = ExprGraph(4)
    x = [g.var(i) for i in range(4)]
    expr = g.tanh(g.add(g.mul(x[0], x[1]), g.div(x[2], g.add(x[3], g.constant(3.0)))))
    g.add_root(expr)
    g.seal()
    pt = np.array([0.3, -1.2, 0.9, 0.1])
    v1 = g.evaluate(pt)
    v2 = g.evaluate(pt)
    assert v1.tobytes() == v2.tobytes()
    _, j1 = g.jacobian(pt)
    _, j2 = g.jacobian(pt)
    assert j1.tobytes() == j2.tobytes()


def test_evaluate_errors():
    g = ExprGraph(1)
    bad = g.div(g.constant(1.0), g.var(0))
    g.add_root(bad)
    g.seal()
    with pytest.raises(EvaluationError) as exc:
        g.evaluate([0.0])
    assert exc.value.node == bad

    h = ExprGraph(1)
    bad = h.log(h.var(0))
    h.add_root(bad)
    h.seal()
    with pytest.raises(EvaluationError) as exc:
        h.evaluate([-1.0])
    assert exc.value.node == bad


def test_builder_errors():
    g = ExprGraph(1)
    with pytest.raises(GraphError):
        g.var(1)
    with pytest.raises(GraphError):
        g.add(0, 5)
    g.add_root(g.var(0))
    g.seal()
    with pytest.raises(GraphError):
        g.add(0, 0)
    with pytest.raises(GraphError):
        g.evaluate([1.0, 2.0])


def test_fd_check_linear():
    g = ExprGraph(3)
    expr = g.add(g.var(0), g.sub(g.mul(g.constant(4.0), g.var(1)), g.var(2)))
    g.add_root(expr)
    g.seal()
    rep = fd_check(g, [0.3, 0.7, -0.2], 1e-6)
    assert rep.max_rel_jacobian < 1e-9
    assert not rep.nan_flags


def test_fd_check_tanh_chain():
    g = ExprGraph(1)
    node = g.var(0)
    for _ in range(5):
        node = g.tanh(node)
    g.add_root(node)
    g.seal()
    rep = fd_check(g, [0.37], 1e-6)
    assert rep.max_rel_jacobian < 1e-6
    assert rep.max_rel_hessian < 1e-4


def test_fd_check_log_domain_edge():
    g = ExprGraph(1)
    g.add_root(g.log(g.var(0)))
    g.seal()
    rep = fd_check(g, [1e-12], 1e-6)
    assert rep.nan_flags


def test_shared_subgraph_reuse():
    # diff = x0^2 - x1^2 used twice; derivative must count both uses
    g = ExprGraph(2)
    diff = g.sub(g.square(g.var(0)), g.square(g.var(1)))
    g.add_root(g.add(g.mul(diff, diff), diff))
    g.seal()
    x0, x1 = 1.5, 0.5
    d = x0 ** 2 - x1 ** 2
    assert g.evaluate([x0, x1])[0] == pytest.approx(d * d + d)
    _, jv = g.jacobian([x0, x1])
    expect = (2 * d + 1) * 2 * x0
    assert jv[0] == pytest.approx(expect, rel=1e-12)


def test_workspace_reuse_matches_fresh():
    g = ExprGraph(2)
    g.add_root(g.sin(g.mul(g.var(0), g.var(1))))
    g.add_root(g.cos(g.add(g.var(0), g.var(1))))
    g.seal()
    ws = g.workspace()
    a = g.evaluate([0.2, 0.4], ws)
    b = g.evaluate([0.2, 0.4])
    assert a.tobytes() == b.tobytes()
    _, ja = g.jacobian([0.2, 0.4], ws)
    _, jb = g.jacobian([0.2, 0.4])
    assert ja.tobytes() == jb.tobytes()


def test_dump_sexpr(tmp_path):
    g = ExprGraph(2)
    shared = g.mul(g.var(0), g.var(1))
    g.add_root(g.add(shared, shared))
    g.seal()
    path = tmp_path / "graph.sexpr"
    g.dump_sexpr(path)
    text = path.read_text()
    assert text == f"(root 0 (add (mul (var 0) (var 1)) (ref {shared})))\n"


# -- randomized structural checks -------------------------------------------

_SMOOTH_UNARY = ["tanh", "sigmoid", "exp", "sin", "cos", "neg", "square"]


def build_random_graph(rng: np.random.Generator, n_vars: int, n_nodes: int,
                       n_roots: int) -> ExprGraph:
    g = ExprGraph(n_vars)
    pool = [g.var(i) for i in range(n_vars)]
    pool.append(g.constant(float(rng.uniform(-2, 2))))
    for _ in range(n_nodes):
        kind = rng.integers(0, 10)
        a = int(rng.integers(0, len(pool)))
        b = int(rng.integers(0, len(pool)))
        if kind < 4:
            op = [g.add, g.sub, g.mul, g.add][kind]
            pool.append(op(pool[a], pool[b]))
        else:
            name = _SMOOTH_UNARY[int(rng.integers(0, len(_SMOOTH_UNARY)))]
            pool.append(getattr(g, name)(pool[a]))
    for _ in range(n_roots):
        g.add_root(pool[int(rng.integers(0, len(pool)))])
    g.seal()
    return g


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_random_graphs_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    g = build_random_graph(rng, n_vars=4, n_nodes=25, n_roots=3)
    point = rng.uniform(-1.5, 1.5, size=4)
    rep = fd_check(g, point, 1e-6)
    assert not rep.nan_flags
    assert rep.max_rel_jacobian < 1e-6
    assert rep.max_rel_hessian < 1e-4


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_random_graph_pattern_stability(seed):
    rng = np.random.default_rng(seed)
    g = build_random_graph(rng, n_vars=3, n_nodes=20, n_roots=2)
    pts = rng.uniform(-2, 2, size=(5, 3))
    pats = set()
    for p in pts:
        jp, _ = g.jacobian(p)
        hp, _ = g.hessian_lagrangian(p, 1.0, [0.5])
        pats.add((id(jp), id(hp)))
    assert len(pats) == 1


def test_ad_fd_agreement_over_many_points():
    rng = np.random.default_rng(7)
    g = build_random_graph(rng, n_vars=3, n_nodes=30, n_roots=2)
    worst_j = worst_h = 0.0
    for _ in range(20):
        p = rng.uniform(-2, 2, size=3)
        rep = fd_check(g, p, 1e-6)
        worst_j = max(worst_j, rep.max_rel_jacobian)
        worst_h = max(worst_h, rep.max_rel_hessian)
    assert worst_j < 1e-6
    assert worst_h < 1e-4
