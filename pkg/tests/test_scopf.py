import numpy as np
import pytest

from surropt.grid import CaseError, GridCase
from surropt.ipm import IpmOptions, solve
from surropt.mlp import make_network
from surropt.nlp import structure_report
from surropt.scopf import (
    Contingency,
    attach_stability,
    build_scopf,
    stability_feature_dim,
    stability_feature_vector,
    verify_power_balance,
)


def test_base_variable_count(case5):
    scopf = build_scopf(case5)
    assert scopf.model.num_variables == 2 * case5.n_bus + 2 * case5.n_gen


def test_contingency_adds_only_voltage_variables(case5):
    base = build_scopf(case5)
    with_ctg = build_scopf(case5, [Contingency("g2out", gen_ids=(2,))])
    extra = with_ctg.model.num_variables - base.model.num_variables
    assert extra == 2 * case5.n_bus
    # dispatch variables are shared: same indices in both models
    assert np.array_equal(base.pg_idx, with_ctg.pg_idx)
    assert np.array_equal(base.qg_idx, with_ctg.qg_idx)
    # balance rows: all buses in the base scenario, all but the reference
    # bus in the contingency scenario
    rep_b = structure_report(build_scopf(case5).model)
    rep_c = structure_report(build_scopf(case5, [Contingency("x", gen_ids=(2,))]).model)
    balance_delta = (rep_c.per_tag["power-balance"].rows
                     - rep_b.per_tag["power-balance"].rows)
    assert balance_delta == 2 * (case5.n_bus - 1)


def test_islanding_contingency_rejected(case5):
    # removing all three branches at bus 3 would island it
    with pytest.raises(CaseError):
        build_scopf(case5, [Contingency("island", branch_ids=(1, 2))])


def test_unknown_generator_rejected(case5):
    with pytest.raises(CaseError):
        build_scopf(case5, [Contingency("bad", gen_ids=(99,))])


def test_zero_demand_corner(case5):
    # charging susceptance zeroed as well, so zero flow is exactly feasible
    branches = tuple(type(br)(br.from_bus, br.to_bus, br.r, br.x, 0.0, br.rate)
                     for br in case5.branches)
    case0 = GridCase(case5.name, case5.base_mva, case5.frequency_hz,
                     case5.reference_bus, case5.buses, case5.generators,
                     branches, ())
    scopf = build_scopf(case0)
    res = solve(scopf.model)
    assert res.status == "optimal"
    pg, _ = scopf.dispatch(res.x)
    pmin = np.array([g.pmin for g in case0.generators])
    assert pg == pytest.approx(pmin, abs=1e-6)
    cost_at_pmin = sum(
        g.cost[0] * (g.pmin * case0.base_mva) ** 2
        + g.cost[1] * g.pmin * case0.base_mva + g.cost[2]
        for g in case0.generators)
    assert res.objective == pytest.approx(cost_at_pmin, abs=1e-4)


def test_solution_power_balance_verified_independently(case5):
    scopf = build_scopf(case5, [Contingency("g2out", gen_ids=(2,))])
    res = solve(scopf.model)
    assert res.status == "optimal"
    assert verify_power_balance(scopf, res.x) < 1e-6


def test_base_opf_matches_dispatch_grid_search(case5):
    """200 x 200 brute force over (cheap-unit dispatch, generator voltage
    setpoint) with an inner slack power flow, feasibility-filtered."""
    from surropt.grid import newton_power_flow

    scopf = build_scopf(case5)
    res = solve(scopf.model)
    assert res.status == "optimal"

    idx = case5.bus_index()
    base = case5.base_mva
    g1, g2 = case5.generators
    best = np.inf
    for p2 in np.linspace(g2.pmin, g2.pmax, 200):
        for vset in np.linspace(0.98, 1.06, 200):
            gens = tuple(
                type(g)(g.id, g.bus, g.pmin, g.pmax, g.qmin, g.qmax, g.cost,
                        g.inertia, g.damping, g.xd_prime, vset, g.pg0)
                for g in case5.generators)
            case_v = GridCase(case5.name, base, case5.frequency_hz,
                              case5.reference_bus, case5.buses, gens,
                              case5.branches, case5.demands)
            pf = newton_power_flow(case_v, pg=[0.0, p2], tol=1e-9, max_iter=25)
            if not pf.converged:
                continue
            p1 = pf.slack_p
            if not (g1.pmin <= p1 <= g1.pmax):
                continue
            if np.any(pf.v < 0.9 - 1e-9) or np.any(pf.v > 1.06 + 1e-9):
                continue
            cost = (g1.cost[0] * (p1 * base) ** 2 + g1.cost[1] * p1 * base
                    + g2.cost[0] * (p2 * base) ** 2 + g2.cost[1] * p2 * base)
            best = min(best, cost)
    assert abs(res.objective - best) / abs(best) < 1e-3


@pytest.fixture(scope="module")
def surrogate(case5):
    return make_network([stability_feature_dim(case5), 8, 8, case5.n_bus],
                        seed=42)


def test_attach_stability_graybox_counts(case5, surrogate):
    scopf = build_scopf(case5, [Contingency("g2out", gen_ids=(2,))])
    before = structure_report(build_scopf(
        case5, [Contingency("g2out", gen_ids=(2,))]).model)
    attach_stability(scopf, surrogate, "graybox", eta_hz=59.4)
    rep = structure_report(scopf.model)
    assert rep.num_variables - before.num_variables == case5.n_bus
    assert rep.num_constraints - before.num_constraints == 2 * case5.n_bus


def test_attach_stability_reduced_counts(case5, surrogate):
    scopf = build_scopf(case5, [Contingency("g2out", gen_ids=(2,))])
    before = structure_report(build_scopf(
        case5, [Contingency("g2out", gen_ids=(2,))]).model)
    attach_stability(scopf, surrogate, "reduced", eta_hz=59.4)
    rep = structure_report(scopf.model)
    assert rep.num_variables - before.num_variables == 0
    assert rep.num_constraints - before.num_constraints == case5.n_bus


def test_eta_disabled_matches_unconstrained(case5, surrogate):
    plain = build_scopf(case5, [Contingency("g2out", gen_ids=(2,))])
    res_plain = solve(plain.model)
    ghost = build_scopf(case5, [Contingency("g2out", gen_ids=(2,))])
    attach_stability(ghost, surrogate, "graybox", eta_hz=-np.inf)
    res_ghost = solve(ghost.model)
    assert res_plain.status == res_ghost.status == "optimal"
    assert res_ghost.objective == pytest.approx(res_plain.objective, rel=1e-7)


def test_attach_dimension_mismatch(case5):
    scopf = build_scopf(case5, [Contingency("g2out", gen_ids=(2,))])
    bad = make_network([3, 4, case5.n_bus], seed=0)
    with pytest.raises(CaseError):
        attach_stability(scopf, bad, "graybox", 59.4)


def test_feature_vector_layout(case5):
    pd, qd = case5.demand_vectors()
    feats = stability_feature_vector(case5)
    assert len(feats) == stability_feature_dim(case5)
    assert feats[: case5.n_bus] == pytest.approx(pd)
    assert feats[case5.n_bus: 2 * case5.n_bus] == pytest.approx(qd)
    assert feats[2 * case5.n_bus:] == pytest.approx(case5.nominal_dispatch())
