"""Swing-equation transient simulator and training-data sampler.

Classical machine model: each generator is a constant EMF behind its
transient reactance, loads are constant impedances fixed at the
pre-disturbance power flow, and the network is Kron-reduced to the generator
internal nodes.  Per generator,

    d(delta)/dt  = Omega0 * dw
    d(dw)/dt     = (Pm - Pe(delta) - D * dw) / (2 H)

with dw the per-unit speed deviation, integrated by fixed-step RK4.  A
generator outage at the disturbance time removes the machine's internal node
and re-reduces the network; the remaining mechanical powers are unchanged,
so the imbalance drives the frequency excursion.  Mechanical power is set to
the reduced-network electrical power at the initial angles, which makes the
undisturbed trajectory an exact equilibrium.

Bus frequencies are reconstructed as admittance-weighted averages of machine
frequencies: the weights come from the voltage-recovery matrix of the
reduction (bus voltages are linear in the machine EMFs), which is the
natural interpolation the classical model admits.

``sample_dataset`` draws demands and dispatch uniformly within a relative
band of their nominal values, restores balance through the slack generator
by an AC power flow, simulates the configured contingency, and records the
per-bus minimum frequency as the training target.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .grid import CaseError, GridCase, newton_power_flow, ybus


class SimulationError(RuntimeError):
    pass


@dataclass
class TransientConfig:
    horizon: float = 30.0           # seconds
    step: float = 0.01              # seconds
    contingency: int | None = None  # outaged generator id
    disturbance_time: float = 1.0   # seconds
    nominal_frequency_hz: float = 60.0

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("integration step must be positive")
        if self.horizon < self.disturbance_time:
            raise ValueError("horizon must cover the disturbance time")


@dataclass
class TransientResult:
    time: np.ndarray                  # shared grid, seconds
    angles: np.ndarray                # steps x n_gen, rotor angle, rad
    speed_deviation: np.ndarray       # steps x n_gen, per unit
    bus_frequency: np.ndarray         # steps x n_bus, Hz
    gen_ids: tuple[int, ...]
    disturbance_index: int            # first sample at/after the disturbance
    blown_up: bool
    emf: np.ndarray = field(repr=False, default=None)
    mech_power: np.ndarray = field(repr=False, default=None)
    y_reduced_pre: np.ndarray = field(repr=False, default=None)
    y_reduced_post: np.ndarray = field(repr=False, default=None)
    post_members: tuple[int, ...] = ()

    @property
    def min_frequency(self) -> np.ndarray:
        return min_frequency(self)


def min_frequency(result: TransientResult) -> np.ndarray:
    """Per-bus minimum frequency over the post-disturbance window, Hz."""
    if result.blown_up:
        raise SimulationError("trajectory blew up; minimum frequency undefined")
    return result.bus_frequency[result.disturbance_index:].min(axis=0)


def _split_bus_power(case: GridCase, pg, p_inj, q_inj, slack_bus):
    """Per-generator complex power at the power-flow solution.

    Real power follows the dispatch (slack picks up the bus residual);
    reactive power splits evenly among machines on a bus.
    """
    idx = case.bus_index()
    pd, qd = case.demand_vectors()
    per_bus_count = {}
    for g in case.generators:
        per_bus_count[idx[g.bus]] = per_bus_count.get(idx[g.bus], 0) + 1
    p_gen = np.asarray(pg, dtype=np.float64).copy()
    q_gen = np.zeros(case.n_gen)
    for gi, g in enumerate(case.generators):
        b = idx[g.bus]
        q_bus = q_inj[b] + qd[b]
        q_gen[gi] = q_bus / per_bus_count[b]
        if b == slack_bus:
            p_bus = p_inj[b] + pd[b]
            others = sum(p_gen[gj] for gj, gg in enumerate(case.generators)
                         if idx[gg.bus] == b and gj != gi)
            p_gen[gi] = p_bus - others
            # only the first machine at the slack bus absorbs the residual
            slack_bus = -1
    return p_gen, q_gen


def _reduce(case: GridCase, load_adm: np.ndarray, active: list[int]):
    """Kron reduction to the internal nodes of the active generators.

    Returns (reduced admittance over active machines, bus-recovery matrix).
    """
    idx = case.bus_index()
    nb = case.n_bus
    ng = len(active)
    Ynn = ybus(case) + np.diag(load_adm)
    Yng = np.zeros((nb, ng), dtype=complex)
    Ygg = np.zeros((ng, ng), dtype=complex)
    for k, gi in enumerate(active):
        g = case.generators[gi]
        yg = 1.0 / complex(0.0, g.xd_prime)
        b = idx[g.bus]
        Ynn[b, b] += yg
        Ygg[k, k] += yg
        Yng[b, k] -= yg
    recover = np.linalg.solve(Ynn, -Yng)          # V_bus = recover @ E
    y_red = Ygg + Yng.T @ recover
    return y_red, recover


def _bus_weights(recover: np.ndarray) -> np.ndarray:
    w = np.abs(recover)
    s = w.sum(axis=1, keepdims=True)
    s[s == 0.0] = 1.0
    return w / s


def simulate(case: GridCase, cfg: TransientConfig, pg=None, pd=None,
             qd=None) -> TransientResult:
    """Integrate the post-contingency swing response of an operating point."""
    f0 = cfg.nominal_frequency_hz
    pd0, qd0 = case.demand_vectors()
    pd = pd0 if pd is None else np.asarray(pd, dtype=np.float64)
    qd = qd0 if qd is None else np.asarray(qd, dtype=np.float64)
    pg = case.nominal_dispatch() if pg is None else np.asarray(pg, dtype=np.float64)

    pf = newton_power_flow(case, pg=pg, pd=pd, qd=qd, tol=1e-10)
    if not pf.converged:
        raise SimulationError("pre-contingency power flow did not converge")
    idx = case.bus_index()
    slack_bus = idx[case.reference_bus]
    p_gen, q_gen = _split_bus_power(case, pg, pf.p_injection, pf.q_injection,
                                    slack_bus)

    # internal EMFs behind the transient reactances
    vbus = pf.v * np.exp(1j * pf.theta)
    emf = np.zeros(case.n_gen, dtype=complex)
    for gi, g in enumerate(case.generators):
        vt = vbus[idx[g.bus]]
        ig = np.conj(complex(p_gen[gi], q_gen[gi]) / vt)
        emf[gi] = vt + 1j * g.xd_prime * ig
    e_mag = np.abs(emf)
    delta0 = np.angle(emf)

    # constant-impedance loads at the solved voltages
    with np.errstate(divide="ignore", invalid="ignore"):
        load_adm = np.where(pf.v > 0, (pd - 1j * qd) / pf.v ** 2, 0.0)

    all_gens = list(range(case.n_gen))
    out_ids = () if cfg.contingency is None else (cfg.contingency,)
    for gid in out_ids:
        if gid not in {g.id for g in case.generators}:
            raise CaseError(f"unknown generator {gid} in contingency")
    post_gens = [gi for gi in all_gens
                 if case.generators[gi].id not in out_ids]
    y_pre, rec_pre = _reduce(case, load_adm, all_gens)
    w_pre = _bus_weights(rec_pre)
    if post_gens != all_gens:
        y_post, rec_post = _reduce(case, load_adm, post_gens)
        w_post = _bus_weights(rec_post)
    else:
        y_post, w_post = y_pre, w_pre

    H2 = 2.0 * np.array([g.inertia for g in case.generators])
    D = np.array([g.damping for g in case.generators])
    omega0 = 2.0 * np.pi * f0

    def electrical_power(delta, members, y_red):
        ev = e_mag[members] * np.exp(1j * delta)
        return (ev * np.conj(y_red @ ev)).real

    pm = electrical_power(delta0, all_gens, y_pre)

    def rhs(delta, dw, members, y_red):
        pe = electrical_power(delta, members, y_red)
        return (omega0 * dw,
                (pm[members] - pe - D[members] * dw) / H2[members])

    n_steps = int(round(cfg.horizon / cfg.step))
    time_grid = np.arange(n_steps + 1) * cfg.step
    dist_index = int(np.searchsorted(time_grid, cfg.disturbance_time))
    angles = np.full((n_steps + 1, case.n_gen), np.nan)
    speeds = np.full((n_steps + 1, case.n_gen), np.nan)
    busf = np.full((n_steps + 1, case.n_bus), np.nan)

    delta = delta0.copy()
    dw = np.zeros(case.n_gen)
    members = all_gens
    y_red, weights = y_pre, w_pre
    blown = False
    h = cfg.step
    for k in range(n_steps + 1):
        if k == dist_index and post_gens != all_gens:
            members = post_gens
            y_red, weights = y_post, w_post
            delta = delta[members] if len(delta) == case.n_gen else delta
            dw = dw[members] if len(dw) == case.n_gen else dw
        angles[k, members] = delta
        speeds[k, members] = dw
        busf[k] = f0 * (1.0 + weights @ dw)
        if not (np.isfinite(delta).all() and np.isfinite(dw).all()):
            blown = True
            break
        if k == n_steps:
            break
        k1 = rhs(delta, dw, members, y_red)
        k2 = rhs(delta + 0.5 * h * k1[0], dw + 0.5 * h * k1[1], members, y_red)
        k3 = rhs(delta + 0.5 * h * k2[0], dw + 0.5 * h * k2[1], members, y_red)
        k4 = rhs(delta + h * k3[0], dw + h * k3[1], members, y_red)
        delta = delta + (h / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        dw = dw + (h / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])

    return TransientResult(
        time=time_grid,
        angles=angles,
        speed_deviation=speeds,
        bus_frequency=busf,
        gen_ids=tuple(g.id for g in case.generators),
        disturbance_index=dist_index,
        blown_up=blown,
        emf=e_mag,
        mech_power=pm,
        y_reduced_pre=y_pre,
        y_reduced_post=y_post,
        post_members=tuple(post_gens),
    )


# -- dataset sampling -----------------------------------------------------------


@dataclass
class Dataset:
    inputs: np.ndarray        # rows x (2 n_bus + n_gen)
    targets: np.ndarray       # rows x n_bus, Hz
    feature_names: list[str]
    target_names: list[str]
    resampled: int = 0


def feature_names(case: GridCase) -> list[str]:
    names = [f"pd_bus{b.id}" for b in case.buses]
    names += [f"qd_bus{b.id}" for b in case.buses]
    names += [f"pg_gen{g.id}" for g in case.generators]
    return names


def sample_dataset(case: GridCase, cfg: TransientConfig, n: int, seed: int,
                   spread: float = 0.2, max_resamples: int = 1000) -> Dataset:
    """Uniform sampling within +-spread of nominal demands and dispatch.

    The slack generator is re-dispatched by the power flow to restore
    balance; points whose power flow fails are resampled and counted.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    idx = case.bus_index()
    slack_bus = idx[case.reference_bus]
    slack_gen = next(gi for gi, g in enumerate(case.generators)
                     if idx[g.bus] == slack_bus)
    pd0, qd0 = case.demand_vectors()
    pg0 = case.nominal_dispatch()
    rows_in, rows_out = [], []
    resampled = 0
    while len(rows_in) < n:
        if resampled > max_resamples:
            raise SimulationError("too many unsolvable sampled points")
        pd = pd0 * rng.uniform(1.0 - spread, 1.0 + spread, size=case.n_bus)
        qd = qd0 * rng.uniform(1.0 - spread, 1.0 + spread, size=case.n_bus)
        pg = pg0 * rng.uniform(1.0 - spread, 1.0 + spread, size=case.n_gen)
        pf = newton_power_flow(case, pg=pg, pd=pd, qd=qd)
        if not pf.converged:
            resampled += 1
            continue
        pg_actual = pg.copy()
        pg_actual[slack_gen] = pf.slack_p
        try:
            result = simulate(case, cfg, pg=pg, pd=pd, qd=qd)
            target = min_frequency(result)
        except (SimulationError, np.linalg.LinAlgError):
            resampled += 1
            continue
        rows_in.append(np.concatenate([pd, qd, pg_actual]))
        rows_out.append(target)
    return Dataset(np.asarray(rows_in), np.asarray(rows_out),
                   feature_names(case),
                   [f"fmin_bus{b.id}" for b in case.buses], resampled)


def write_dataset_csv(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ds.feature_names + ds.target_names)
        for xi, yi in zip(ds.inputs, ds.targets):
            writer.writerow([repr(float(v)) for v in xi]
                            + [repr(float(v)) for v in yi])


def read_dataset_csv(path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """(inputs, targets, header); target columns are the fmin_* ones."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.asarray(rows)
    n_targets = sum(1 for h in header if h.startswith("fmin_"))
    if n_targets == 0:
        raise CaseError(f"{path}: no fmin_* target columns found")
    return data[:, :-n_targets], data[:, -n_targets:], header


def trace_csv(result: TransientResult) -> str:
    """Bus-frequency trace as CSV text, for plotting."""
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(["t"] + [f"f_bus{k}" for k in range(result.bus_frequency.shape[1])])
    for t, row in zip(result.time, result.bus_frequency):
        writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])
    return out.getvalue()
