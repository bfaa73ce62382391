import json

import numpy as np
import pytest

from surropt.grid import (
    Branch,
    Bus,
    CaseError,
    Demand,
    Generator,
    GridCase,
    complex_mismatch,
    connected_without,
    newton_power_flow,
    parse_case,
    ybus,
)


def test_bundled_case_counts(case5):
    assert case5.n_bus == 5
    assert case5.n_gen == 2
    assert len(case5.branches) == 6
    assert case5.reference_bus == 1
    pd, qd = case5.demand_vectors()
    assert pd.sum() == pytest.approx(2.95)
    assert qd.sum() == pytest.approx(0.95)


def test_cross_format_equality(case5_paths):
    jpath, mpath = case5_paths
    assert parse_case(jpath) == parse_case(mpath)


def test_two_reference_buses_rejected(tmp_path, case5_paths):
    doc = json.loads(case5_paths[0].read_text())
    doc["buses"][1]["reference"] = True
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    with pytest.raises(CaseError):
        parse_case(bad)


def test_disconnected_network_rejected():
    with pytest.raises(CaseError):
        GridCase(
            "island", 100.0, 60.0, 1,
            (Bus(1, 0.9, 1.1), Bus(2, 0.9, 1.1), Bus(3, 0.9, 1.1)),
            (Generator(1, 1, 0, 1, -1, 1, (0, 1, 0)),),
            (Branch(1, 2, 0.01, 0.1),),
            (),
        )


def test_ybus_row_sums_without_shunts():
    # without charging or shunts each row of Y sums to zero
    case = GridCase(
        "tiny", 100.0, 60.0, 1,
        (Bus(1, 0.9, 1.1), Bus(2, 0.9, 1.1)),
        (Generator(1, 1, 0, 1, -1, 1, (0, 1, 0)),),
        (Branch(1, 2, 0.01, 0.1, b=0.0),),
        (),
    )
    Y = ybus(case)
    assert np.allclose(Y.sum(axis=1), 0.0, atol=1e-14)


def test_newton_power_flow_balances(case5):
    pf = newton_power_flow(case5, pg=[1.0, 2.0])
    assert pf.converged
    # mismatch audited independently: slack covers bus 1, PV buses supply pg
    idx = case5.bus_index()
    pg_bus = np.zeros(5)
    qg_bus = np.zeros(5)
    pd, qd = case5.demand_vectors()
    pg_bus[idx[4]] = 2.0
    pg_bus[idx[1]] = pf.slack_p
    qg_bus[idx[1]] = pf.q_injection[idx[1]] + qd[idx[1]]
    qg_bus[idx[4]] = pf.q_injection[idx[4]] + qd[idx[4]]
    mis = complex_mismatch(case5, pf.v, pf.theta, pg_bus, qg_bus)
    assert np.max(np.abs(mis)) < 1e-8


def test_newton_power_flow_respects_setpoints(case5):
    pf = newton_power_flow(case5, pg=[1.0, 2.0])
    idx = case5.bus_index()
    assert pf.v[idx[1]] == pytest.approx(1.02)
    assert pf.v[idx[4]] == pytest.approx(1.01)
    assert pf.theta[idx[1]] == 0.0
    # generation roughly covers demand plus small losses
    total_gen = pf.slack_p + 2.0
    assert 2.95 < total_gen < 3.05


def test_power_flow_slack_picks_up_demand_changes(case5):
    pd, qd = case5.demand_vectors()
    base = newton_power_flow(case5, pg=[1.0, 2.0])
    heavier = newton_power_flow(case5, pg=[1.0, 2.0], pd=pd * 1.1, qd=qd)
    assert heavier.converged
    assert heavier.slack_p > base.slack_p


def test_connected_without_branches(case5):
    assert connected_without(case5, [5])
    # removing the three edges around bus 3 isolates it
    assert not connected_without(case5, [1, 2])


def test_matpower_rejects_nonquadratic_cost(tmp_path, case5_paths):
    text = case5_paths[1].read_text().replace("2	0	0	3	0.08", "1	0	0	3	0.08")
    bad = tmp_path / "bad.m"
    bad.write_text(text)
    with pytest.raises(CaseError):
        parse_case(bad)
