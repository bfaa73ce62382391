"""Security-constrained AC optimal power flow with optional stability rows.

Builds a preventive SCOPF: one shared dispatch (real and reactive power per
generator) must satisfy polar power-flow equalities, squared-current thermal
limits, and voltage bounds on the base network (scenario 0) and on every
contingency network.  A contingency scenario carries its own voltage
variables; its reference-bus balance rows are omitted so the reference
machine implicitly absorbs the outaged power (the classical slack
convention), which keeps the scenario power flow well posed without
introducing per-scenario dispatch variables.

``attach_stability`` wires a trained frequency-nadir surrogate into the
model: the case demands are folded into the network's first layer as
constants, the live inputs are the generator dispatch variables, and one
lower-bound row per bus enforces the minimum-frequency threshold through
whichever embedding formulation was requested.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adgraph import ExprGraph
from .embed import (
    EmbeddingHandle,
    embed_full_space,
    embed_gray_box,
    embed_reduced_space,
)
from .grid import CaseError, GridCase, branch_admittances, connected_without, ybus
from .mlp import MlpNetwork, partial_apply
from .nlp import NlpModel, structure_report

FORMULATIONS = ("full", "reduced", "graybox")


@dataclass(frozen=True)
class Contingency:
    name: str
    gen_ids: tuple[int, ...] = ()
    branch_ids: tuple[int, ...] = ()   # positional indices into case.branches


@dataclass
class ScopfModel:
    case: GridCase
    contingencies: list[Contingency]
    model: NlpModel
    pg_idx: np.ndarray                # per generator
    qg_idx: np.ndarray
    v_idx: list[np.ndarray]           # per scenario, per bus
    th_idx: list[np.ndarray]
    stability_handles: list[EmbeddingHandle] = field(default_factory=list)
    stability_rows: list[list[int]] = field(default_factory=list)
    formulation: str | None = None
    eta_hz: float | None = None
    surrogate: MlpNetwork | None = None

    @property
    def n_scenarios(self) -> int:
        return 1 + len(self.contingencies)

    def dispatch(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x)
        return x[self.pg_idx].copy(), x[self.qg_idx].copy()

    def voltages(self, x, scenario: int) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x)
        return x[self.v_idx[scenario]].copy(), x[self.th_idx[scenario]].copy()


def stability_feature_vector(case: GridCase, pd=None, qd=None, pg=None) -> np.ndarray:
    """[real demand per bus, reactive demand per bus, real dispatch per gen]."""
    pd0, qd0 = case.demand_vectors()
    pd = pd0 if pd is None else np.asarray(pd)
    qd = qd0 if qd is None else np.asarray(qd)
    pg = case.nominal_dispatch() if pg is None else np.asarray(pg)
    return np.concatenate([pd, qd, pg])


def stability_feature_dim(case: GridCase) -> int:
    return 2 * case.n_bus + case.n_gen


def _validate_contingencies(case: GridCase, contingencies) -> None:
    gen_ids = {g.id for g in case.generators}
    for ctg in contingencies:
        for gid in ctg.gen_ids:
            if gid not in gen_ids:
                raise CaseError(f"contingency {ctg.name!r}: unknown generator {gid}")
        for bi in ctg.branch_ids:
            if not 0 <= bi < len(case.branches):
                raise CaseError(f"contingency {ctg.name!r}: branch index {bi} out of range")
        if ctg.branch_ids and not connected_without(case, ctg.branch_ids):
            raise CaseError(
                f"contingency {ctg.name!r} islands the network; not supported")


def build_scopf(case: GridCase, contingencies=()) -> ScopfModel:
    contingencies = list(contingencies)
    _validate_contingencies(case, contingencies)
    m = NlpModel()
    g = m.graph
    idx = case.bus_index()
    ref = idx[case.reference_bus]
    base = case.base_mva
    pd, qd = case.demand_vectors()

    pg_idx = np.array([
        m.add_variable(gen.pmin, gen.pmax,
                       start=min(max(gen.pg0, gen.pmin), gen.pmax),
                       name=f"pg[{gen.id}]")
        for gen in case.generators])
    qg_idx = np.array([
        m.add_variable(gen.qmin, gen.qmax, name=f"qg[{gen.id}]")
        for gen in case.generators])

    gen_vset = {}
    for gen in case.generators:
        gen_vset.setdefault(idx[gen.bus], gen.vset)

    v_idx, th_idx = [], []
    scenarios = [Contingency("base")] + contingencies
    for k, _ in enumerate(scenarios):
        v_idx.append(np.array([
            m.add_variable(b.vmin, b.vmax,
                           start=gen_vset.get(i, 1.0), name=f"v[{k},{b.id}]")
            for i, b in enumerate(case.buses)]))
        th_idx.append(np.array([
            m.add_variable(0.0, 0.0, name=f"th[{k},{b.id}]") if i == ref
            else m.add_variable(name=f"th[{k},{b.id}]")
            for i, b in enumerate(case.buses)]))

    # objective: quadratic generation cost in MW convention
    terms = []
    for gen, pv in zip(case.generators, pg_idx):
        c2, c1, c0 = gen.cost
        p = g.var(int(pv))
        t = g.mul(g.constant(c2 * base * base), g.square(p))
        t = g.add(t, g.mul(g.constant(c1 * base), p))
        if c0:
            t = g.add(t, g.constant(c0))
        terms.append(t)
    obj = terms[0]
    for t in terms[1:]:
        obj = g.add(obj, t)
    m.set_objective(obj)

    for k, ctg in enumerate(scenarios):
        out_gens = {gid for gid in ctg.gen_ids}
        skip_branches = frozenset(ctg.branch_ids)
        Y = ybus(case, skip_branches)
        vv = v_idx[k]
        th = th_idx[k]

        # shared trig/product nodes per connected bus pair in this scenario
        pair_cache: dict[tuple[int, int], tuple[int, int, int]] = {}

        def pair_nodes(i, j):
            key = (i, j) if i < j else (j, i)
            nodes = pair_cache.get(key)
            if nodes is None:
                delta = g.sub(g.var(int(th[key[0]])), g.var(int(th[key[1]])))
                nodes = (g.cos(delta), g.sin(delta),
                         g.mul(g.var(int(vv[key[0]])), g.var(int(vv[key[1]]))))
                pair_cache[key] = nodes
            cosn, sinn, vvn = nodes
            if i < j:
                return cosn, sinn, vvn, 1.0
            return cosn, sinn, vvn, -1.0  # sin is odd in the angle difference

        def flow_terms(i, want_p):
            out = []
            gii, bii = Y[i, i].real, Y[i, i].imag
            self_c = gii if want_p else -bii
            if self_c != 0.0:
                out.append(g.mul(g.constant(self_c),
                                 g.square(g.var(int(vv[i])))))
            for j in range(case.n_bus):
                if j == i or Y[i, j] == 0:
                    continue
                gij, bij = Y[i, j].real, Y[i, j].imag
                cosn, sinn, vvn, sgn = pair_nodes(i, j)
                if want_p:
                    inner = g.add(g.mul(g.constant(gij), cosn),
                                  g.mul(g.constant(sgn * bij), sinn))
                else:
                    inner = g.sub(g.mul(g.constant(sgn * gij), sinn),
                                  g.mul(g.constant(bij), cosn))
                out.append(g.mul(vvn, inner))
            return out

        for i in range(case.n_bus):
            if k > 0 and i == ref:
                continue  # slack absorbs the contingency imbalance
            inj_p = [g.var(int(pg_idx[gi]))
                     for gi, gen in enumerate(case.generators)
                     if idx[gen.bus] == i and gen.id not in out_gens]
            inj_q = [g.var(int(qg_idx[gi]))
                     for gi, gen in enumerate(case.generators)
                     if idx[gen.bus] == i and gen.id not in out_gens]
            p_expr = _tree_sum(g, inj_p + [g.neg(t) for t in flow_terms(i, True)])
            q_expr = _tree_sum(g, inj_q + [g.neg(t) for t in flow_terms(i, False)])
            m.add_constraint(p_expr, pd[i], pd[i], tag="power-balance")
            m.add_constraint(q_expr, qd[i], qd[i], tag="power-balance")

        for bi, br in enumerate(case.branches):
            if bi in skip_branches or br.rate <= 0.0:
                continue
            f, t = idx[br.from_bus], idx[br.to_bus]
            yff, yft, ytf, ytt = branch_admittances(br)
            cosn, sinn, vvn, sgn = pair_nodes(f, t)
            for (ya, yb, a_bus, b_bus, sg) in (
                    (yff, yft, f, t, sgn), (ytt, ytf, t, f, -sgn)):
                cross = ya * np.conj(yb)
                expr = _tree_sum(g, [
                    g.mul(g.constant(abs(ya) ** 2),
                          g.square(g.var(int(vv[a_bus])))),
                    g.mul(g.constant(abs(yb) ** 2),
                          g.square(g.var(int(vv[b_bus])))),
                    g.mul(vvn, g.add(
                        g.mul(g.constant(2.0 * cross.real), cosn),
                        g.mul(g.constant(-2.0 * sg * cross.imag), sinn))),
                ])
                m.add_constraint(expr, -np.inf, br.rate ** 2, tag="thermal")

    return ScopfModel(case, contingencies, m, pg_idx, qg_idx, v_idx, th_idx)


def _tree_sum(g: ExprGraph, nodes):
    nodes = list(nodes)
    if not nodes:
        return g.constant(0.0)
    while len(nodes) > 1:
        nodes = [g.add(nodes[i], nodes[i + 1]) if i + 1 < len(nodes) else nodes[i]
                 for i in range(0, len(nodes), 2)]
    return nodes[0]


def attach_stability(scopf: ScopfModel, net: MlpNetwork, formulation: str,
                     eta_hz: float) -> ScopfModel:
    """Embed the nadir surrogate once per contingency and bound its outputs.

    The network consumes the full feature vector (demands then dispatch);
    demands are case constants, so they are folded into the first layer and
    only the dispatch variables stay live.  ``eta_hz = -inf`` attaches the
    surrogate without the threshold rows (the embedding stays inert).
    """
    if formulation not in FORMULATIONS:
        raise CaseError(f"unknown formulation {formulation!r}")
    case = scopf.case
    want = stability_feature_dim(case)
    if net.input_dim != want:
        raise CaseError(
            f"surrogate expects {net.input_dim} inputs, case provides {want}")
    if net.output_dim != case.n_bus:
        raise CaseError(
            f"surrogate has {net.output_dim} outputs, case has {case.n_bus} buses")
    pd, qd = case.demand_vectors()
    folded = partial_apply(net, np.arange(2 * case.n_bus),
                           np.concatenate([pd, qd]))
    embedder = {"full": embed_full_space, "reduced": embed_reduced_space,
                "graybox": embed_gray_box}[formulation]
    model = scopf.model
    for ctg in scopf.contingencies:
        handle = embedder(model, folded, scopf.pg_idx, tag="stability")
        rows = []
        if np.isfinite(eta_hz):
            if formulation == "reduced":
                for node in handle.output_nodes:
                    rows.append(model.add_constraint(int(node), eta_hz, np.inf,
                                                     tag="stability"))
            else:
                for yv in handle.output_vars:
                    rows.append(model.add_constraint(
                        model.graph.var(int(yv)), eta_hz, np.inf, tag="stability"))
        scopf.stability_handles.append(handle)
        scopf.stability_rows.append(rows)
    scopf.formulation = formulation
    scopf.eta_hz = eta_hz
    scopf.surrogate = net
    return scopf


def verify_power_balance(scopf: ScopfModel, x) -> float:
    """Worst complex power mismatch over all modeled balance rows (p.u.).

    Recomputed from the solution voltages by the standalone admittance-based
    routine in :mod:`surropt.grid`, independent of the expression graphs the
    solver saw.
    """
    from .grid import complex_mismatch

    case = scopf.case
    idx = case.bus_index()
    ref = idx[case.reference_bus]
    pg, qg = scopf.dispatch(x)
    worst = 0.0
    scenarios = [Contingency("base")] + scopf.contingencies
    for k, ctg in enumerate(scenarios):
        v, th = scopf.voltages(x, k)
        pg_bus = np.zeros(case.n_bus)
        qg_bus = np.zeros(case.n_bus)
        for gi, gen in enumerate(case.generators):
            if gen.id in ctg.gen_ids:
                continue
            pg_bus[idx[gen.bus]] += pg[gi]
            qg_bus[idx[gen.bus]] += qg[gi]
        mis = complex_mismatch(case, v, th, pg_bus, qg_bus,
                               skip_branches=frozenset(ctg.branch_ids))
        mask = np.ones(case.n_bus, dtype=bool)
        if k > 0:
            mask[ref] = False
        worst = max(worst, float(np.max(np.abs(mis[mask]))))
    return worst


def scopf_structure_report(scopf: ScopfModel):
    return structure_report(scopf.model)
