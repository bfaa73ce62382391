import numpy as np
import pytest

from surropt.grid import Branch, Bus, Demand, Generator, GridCase
from surropt.transim import (
    SimulationError,
    TransientConfig,
    min_frequency,
    read_dataset_csv,
    sample_dataset,
    simulate,
    write_dataset_csv,
)


def smib_case(outage_p: float = 0.3) -> GridCase:
    """Big machine at the reference bus, test machine plus a small outage
    unit at the load bus: the classic single-machine-against-stiff-system
    arrangement."""
    return GridCase(
        "smib", 100.0, 60.0, 1,
        (Bus(1, 0.9, 1.1), Bus(2, 0.9, 1.1)),
        (
            Generator(1, 1, -5.0, 5.0, -5.0, 5.0, (0.0, 1.0, 0.0),
                      inertia=500.0, damping=50.0, xd_prime=0.05,
                      vset=1.0, pg0=0.0),
            Generator(2, 2, -5.0, 5.0, -5.0, 5.0, (0.0, 1.0, 0.0),
                      inertia=4.0, damping=2.0, xd_prime=0.25,
                      vset=1.0, pg0=0.7),
            Generator(3, 2, -5.0, 5.0, -5.0, 5.0, (0.0, 1.0, 0.0),
                      inertia=1.0, damping=1.0, xd_prime=0.3,
                      vset=1.0, pg0=outage_p),
        ),
        (Branch(1, 2, 0.01, 0.15, 0.0, 0.0),),
        (Demand(2, 1.0, 0.3),),
    )


def test_equilibrium_without_disturbance(case5):
    cfg = TransientConfig(horizon=5.0, contingency=None)
    res = simulate(case5, cfg)
    assert not res.blown_up
    assert np.nanmax(np.abs(res.speed_deviation)) < 1e-9
    assert min_frequency(res) == pytest.approx([60.0] * case5.n_bus, abs=1e-9)


def test_zero_power_outage_is_null_disturbance(case5):
    # generator 2 dispatched to (almost) nothing, then outaged
    cfg = TransientConfig(horizon=10.0, contingency=2)
    res = simulate(case5, cfg, pg=[2.95, 1e-9])
    assert not res.blown_up
    assert min_frequency(res) == pytest.approx([60.0] * case5.n_bus, abs=1e-4)


def test_outage_dips_frequency(case5):
    cfg = TransientConfig(horizon=30.0, contingency=2)
    res = simulate(case5, cfg)
    nadir = min_frequency(res)
    assert np.all(nadir < 60.0)
    assert np.all(nadir > 40.0)  # damping keeps it bounded
    # the dip happens after the disturbance, not before
    pre = res.bus_frequency[: res.disturbance_index]
    assert np.nanmax(np.abs(pre - 60.0)) < 1e-9


def test_min_frequency_is_elementwise_min(case5):
    cfg = TransientConfig(horizon=10.0, contingency=2)
    res = simulate(case5, cfg)
    manual = res.bus_frequency[res.disturbance_index:].min(axis=0)
    assert min_frequency(res) == pytest.approx(manual)


def test_smib_nadir_matches_fine_reference():
    case = smib_case(0.3)
    cfg = TransientConfig(horizon=15.0, step=0.01, contingency=3)
    fine = TransientConfig(horizon=15.0, step=0.0001, contingency=3)
    nadir = min_frequency(simulate(case, cfg))
    ref = min_frequency(simulate(case, fine))
    assert nadir == pytest.approx(ref, abs=1e-4)


def test_smib_nadir_matches_adaptive_integrator():
    from scipy.integrate import solve_ivp

    case = smib_case(0.3)
    cfg = TransientConfig(horizon=15.0, step=0.01, contingency=3)
    res = simulate(case, cfg)

    # rebuild the post-outage swing system from the result's own data and
    # integrate it with an independent adaptive method
    members = list(res.post_members)
    y_red = res.y_reduced_post
    e = res.emf[members]
    pm = res.mech_power[members]
    H2 = 2.0 * np.array([case.generators[i].inertia for i in members])
    D = np.array([case.generators[i].damping for i in members])
    om0 = 2 * np.pi * 60.0
    k0 = res.disturbance_index
    y0 = np.concatenate([res.angles[k0, members], res.speed_deviation[k0, members]])

    def f(_t, y):
        d, w = y[: len(members)], y[len(members):]
        ev = e * np.exp(1j * d)
        pe = (ev * np.conj(y_red @ ev)).real
        return np.concatenate([om0 * w, (pm - pe - D * w) / H2])

    t_span = (res.time[k0], res.time[-1])
    sol = solve_ivp(f, t_span, y0, rtol=1e-10, atol=1e-12, dense_output=True)
    ws = sol.sol(res.time[k0:])[len(members):]
    # compare the worst per-machine speed dip, mapped to Hz
    ref_min = 60.0 * (1.0 + ws.min(axis=1))
    mine_min = 60.0 * (1.0 + res.speed_deviation[k0:, members].min(axis=0))
    assert mine_min == pytest.approx(ref_min, abs=1e-4)


def test_monotone_disturbance_response():
    nadirs = []
    for p in (0.1, 0.2, 0.3, 0.4, 0.5):
        cfg = TransientConfig(horizon=15.0, contingency=3)
        res = simulate(smib_case(p), cfg)
        nadirs.append(min_frequency(res).min())
    assert all(a > b for a, b in zip(nadirs, nadirs[1:]))


def test_step_halving_converged(case5):
    cfg = TransientConfig(horizon=30.0, step=0.01, contingency=2)
    half = TransientConfig(horizon=30.0, step=0.005, contingency=2)
    n1 = min_frequency(simulate(case5, cfg))
    n2 = min_frequency(simulate(case5, half))
    assert np.max(np.abs(n1 - n2)) <= 1e-5


def test_lossless_energy_conserved():
    # lossless network, reactive-only load, zero damping: the post-outage
    # swing conserves kinetic plus potential energy
    case = GridCase(
        "lossless", 100.0, 60.0, 1,
        (Bus(1, 0.5, 1.5), Bus(2, 0.5, 1.5)),
        (
            Generator(1, 1, -5, 5, -5, 5, (0, 1, 0), inertia=5.0,
                      damping=0.0, xd_prime=0.2, vset=1.0, pg0=0.0),
            Generator(2, 2, -5, 5, -5, 5, (0, 1, 0), inertia=3.0,
                      damping=0.0, xd_prime=0.25, vset=1.0, pg0=0.8),
            Generator(3, 2, -5, 5, -5, 5, (0, 1, 0), inertia=1.0,
                      damping=0.0, xd_prime=0.3, vset=1.0, pg0=-0.3),
        ),
        (Branch(1, 2, 0.0, 0.2, 0.0, 0.0),),
        (Demand(2, 0.0, 0.3),),
    )
    cfg = TransientConfig(horizon=30.0, step=0.01, contingency=3,
                          disturbance_time=1.0)
    res = simulate(case, cfg)
    assert not res.blown_up
    members = list(res.post_members)
    y = res.y_reduced_post
    assert np.max(np.abs(y.real)) < 1e-9  # genuinely lossless
    e = res.emf[members]
    pm = res.mech_power[members]
    H = np.array([case.generators[i].inertia for i in members])
    om0 = 2 * np.pi * 60.0
    B = y.imag
    k0 = res.disturbance_index

    def energy(k):
        d = res.angles[k, members]
        w = res.speed_deviation[k, members]
        kin = om0 * np.sum(H * w ** 2)
        pot = -np.sum(pm * d)
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                pot -= B[i, j] * e[i] * e[j] * np.cos(d[i] - d[j])
        return kin + pot

    e0 = energy(k0)
    scale = max(abs(e0), om0 * np.sum(H * res.speed_deviation[-1, members] ** 2))
    drift = max(abs(energy(k) - e0) for k in range(k0, len(res.time), 50))
    assert drift / max(scale, 1.0) < 1e-6


def test_energy_drift_zero_at_equilibrium(case5):
    # damping-free, disturbance-free trajectory must hold exactly still
    gens = tuple(type(g)(g.id, g.bus, g.pmin, g.pmax, g.qmin, g.qmax, g.cost,
                         g.inertia, 0.0, g.xd_prime, g.vset, g.pg0)
                 for g in case5.generators)
    case = GridCase(case5.name, case5.base_mva, case5.frequency_hz,
                    case5.reference_bus, case5.buses, gens, case5.branches,
                    case5.demands)
    res = simulate(case, TransientConfig(horizon=30.0, contingency=None))
    assert np.nanmax(np.abs(res.speed_deviation)) < 1e-9


def test_sample_dataset_deterministic(case5):
    cfg = TransientConfig(horizon=5.0, contingency=2)
    a = sample_dataset(case5, cfg, n=3, seed=7)
    b = sample_dataset(case5, cfg, n=3, seed=7)
    assert a.inputs.tobytes() == b.inputs.tobytes()
    assert a.targets.tobytes() == b.targets.tobytes()


def test_sample_dataset_degenerate_interval(case5):
    cfg = TransientConfig(horizon=5.0, contingency=2)
    ds = sample_dataset(case5, cfg, n=1, seed=0, spread=0.0)
    pd, qd = case5.demand_vectors()
    nb = case5.n_bus
    assert ds.inputs[0, :nb] == pytest.approx(pd, abs=0)
    assert ds.inputs[0, nb:2 * nb] == pytest.approx(qd, abs=0)
    # non-slack dispatch entries equal their nominal values exactly
    assert ds.inputs[0, 2 * nb + 1] == case5.generators[1].pg0


def test_sample_dataset_targets_below_nominal(case5):
    cfg = TransientConfig(horizon=10.0, contingency=2)
    ds = sample_dataset(case5, cfg, n=5, seed=3)
    assert ds.inputs.shape == (5, 2 * case5.n_bus + case5.n_gen)
    assert np.all(ds.targets <= 60.0)


def test_dataset_csv_round_trip(tmp_path, case5):
    cfg = TransientConfig(horizon=5.0, contingency=2)
    ds = sample_dataset(case5, cfg, n=2, seed=1)
    path = tmp_path / "ds.csv"
    write_dataset_csv(ds, path)
    X, Y, header = read_dataset_csv(path)
    assert X.tobytes() == ds.inputs.tobytes()
    assert Y.tobytes() == ds.targets.tobytes()
    assert header[0] == "pd_bus1"


def test_blown_up_result_raises():
    from surropt.transim import TransientResult

    res = TransientResult(
        time=np.arange(3.0), angles=np.zeros((3, 1)),
        speed_deviation=np.zeros((3, 1)), bus_frequency=np.zeros((3, 1)),
        gen_ids=(1,), disturbance_index=0, blown_up=True)
    with pytest.raises(SimulationError):
        min_frequency(res)
