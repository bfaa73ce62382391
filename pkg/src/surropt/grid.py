"""Grid case data model, case file parsers, and Newton power flow.

Two on-disk formats are supported and parse to identical ``GridCase``
objects:

* a versioned JSON schema (the repo's native format), with all electrical
  quantities in per-unit on the case MVA base, frequencies in Hz, and
  generator cost coefficients in MW-convention dollars
  (``cost = c2 P_MW^2 + c1 P_MW + c0``);
* a restricted MATPOWER-style text subset: ``mpc.baseMVA``, ``mpc.bus``,
  ``mpc.gen``, ``mpc.branch``, quadratic ``mpc.gencost`` rows, plus an
  ``mpc.gendyn`` extension matrix carrying per-generator inertia, damping,
  transient reactance, and nominal dispatch (columns H, D, xd', Pg0 in MW).
  Comments start with ``%``; whitespace is free-form.

The module also provides the dense bus admittance matrix, a polar Newton
power flow (reference bus slack, generator buses PV, the rest PQ), and an
independent complex power-mismatch routine used to audit optimizer output.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np


class CaseError(ValueError):
    """Malformed or inconsistent grid case data."""


@dataclass(frozen=True)
class Bus:
    id: int
    vmin: float
    vmax: float
    gs: float = 0.0
    bs: float = 0.0


@dataclass(frozen=True)
class Generator:
    id: int
    bus: int
    pmin: float
    pmax: float
    qmin: float
    qmax: float
    cost: tuple[float, float, float]   # c2, c1, c0 against MW
    inertia: float = 4.0               # H, seconds
    damping: float = 20.0              # combined damping, pu power / pu speed
    xd_prime: float = 0.3              # transient reactance, p.u.
    vset: float = 1.0
    pg0: float = 0.0                   # nominal dispatch, p.u.


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0
    rate: float = 0.0                  # current limit, p.u.; 0 = none


@dataclass(frozen=True)
class Demand:
    bus: int
    p: float
    q: float


@dataclass(frozen=True)
class GridCase:
    name: str
    base_mva: float
    frequency_hz: float
    reference_bus: int
    buses: tuple[Bus, ...]
    generators: tuple[Generator, ...]
    branches: tuple[Branch, ...]
    demands: tuple[Demand, ...]

    def __post_init__(self):
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise CaseError("duplicate bus ids")
        known = set(ids)
        if self.reference_bus not in known:
            raise CaseError(f"reference bus {self.reference_bus} unknown")
        for b in self.buses:
            if not 0.0 < b.vmin < b.vmax:
                raise CaseError(f"bus {b.id}: voltage bounds must satisfy 0 < vmin < vmax")
        for g in self.generators:
            if g.bus not in known:
                raise CaseError(f"generator {g.id} at unknown bus {g.bus}")
            if g.pmin > g.pmax or g.qmin > g.qmax:
                raise CaseError(f"generator {g.id}: inverted limits")
        for br in self.branches:
            if br.from_bus not in known or br.to_bus not in known:
                raise CaseError("branch endpoint unknown")
        for d in self.demands:
            if d.bus not in known:
                raise CaseError(f"demand at unknown bus {d.bus}")
        if not _connected(self, frozenset()):
            raise CaseError("network is not connected")

    # -- indexing ----------------------------------------------------------

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    def demand_vectors(self) -> tuple[np.ndarray, np.ndarray]:
        idx = self.bus_index()
        pd = np.zeros(self.n_bus)
        qd = np.zeros(self.n_bus)
        for d in self.demands:
            pd[idx[d.bus]] += d.p
            qd[idx[d.bus]] += d.q
        return pd, qd

    def nominal_dispatch(self) -> np.ndarray:
        return np.array([g.pg0 for g in self.generators])


def _connected(case: GridCase, skip_branches: frozenset[int]) -> bool:
    idx = case.bus_index()
    adj: dict[int, set[int]] = {i: set() for i in range(case.n_bus)}
    for k, br in enumerate(case.branches):
        if k in skip_branches:
            continue
        a, b = idx[br.from_bus], idx[br.to_bus]
        adj[a].add(b)
        adj[b].add(a)
    seen = {0}
    stack = [0]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == case.n_bus


def connected_without(case: GridCase, skip_branches) -> bool:
    return _connected(case, frozenset(skip_branches))


def branch_admittances(br: Branch) -> tuple[complex, complex, complex, complex]:
    """(yff, yft, ytf, ytt) of the pi model."""
    ys = 1.0 / complex(br.r, br.x)
    sh = complex(0.0, br.b / 2.0)
    return ys + sh, -ys, -ys, ys + sh


def ybus(case: GridCase, skip_branches=frozenset(), include_shunts=True) -> np.ndarray:
    idx = case.bus_index()
    n = case.n_bus
    Y = np.zeros((n, n), dtype=complex)
    for k, br in enumerate(case.branches):
        if k in skip_branches:
            continue
        f, t = idx[br.from_bus], idx[br.to_bus]
        yff, yft, ytf, ytt = branch_admittances(br)
        Y[f, f] += yff
        Y[f, t] += yft
        Y[t, f] += ytf
        Y[t, t] += ytt
    if include_shunts:
        for b in case.buses:
            Y[idx[b.id], idx[b.id]] += complex(b.gs, b.bs)
    return Y


# -- power flow ----------------------------------------------------------------


@dataclass
class PowerFlowResult:
    converged: bool
    v: np.ndarray
    theta: np.ndarray
    p_injection: np.ndarray      # net bus real injection, p.u.
    q_injection: np.ndarray
    slack_p: float               # total generation required at the slack bus
    iterations: int = 0


def _s_calc(Y: np.ndarray, v: np.ndarray, theta: np.ndarray) -> np.ndarray:
    V = v * np.exp(1j * theta)
    return V * np.conj(Y @ V)


def newton_power_flow(case: GridCase, pg=None, pd=None, qd=None,
                      skip_branches=frozenset(), tol: float = 1e-10,
                      max_iter: int = 40) -> PowerFlowResult:
    """Polar Newton-Raphson: reference bus slack, generator buses PV.

    ``pg`` is real dispatch per generator (p.u.); entries for generators at
    the reference bus are ignored (the slack absorbs the mismatch there).
    """
    idx = case.bus_index()
    n = case.n_bus
    if pg is None:
        pg = case.nominal_dispatch()
    pg = np.asarray(pg, dtype=np.float64)
    if pd is None or qd is None:
        pd0, qd0 = case.demand_vectors()
        pd = pd0 if pd is None else np.asarray(pd)
        qd = qd0 if qd is None else np.asarray(qd)
    Y = ybus(case, skip_branches)

    ref = idx[case.reference_bus]
    gen_buses = sorted({idx[g.bus] for g in case.generators})
    pv = [b for b in gen_buses if b != ref]
    pq = [b for b in range(n) if b not in gen_buses and b != ref]

    vset = np.ones(n)
    for g in case.generators:
        vset[idx[g.bus]] = g.vset
    v = vset.copy()
    for b in pq:
        v[b] = 1.0
    theta = np.zeros(n)

    p_spec = -pd.copy()
    for g, p in zip(case.generators, pg):
        if idx[g.bus] != ref:
            p_spec[idx[g.bus]] += p
    q_spec = -qd.copy()

    ang_rows = [b for b in range(n) if b != ref]
    mag_rows = pq
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        S = _s_calc(Y, v, theta)
        dp = p_spec - S.real
        dq = q_spec - S.imag
        F = np.concatenate([dp[ang_rows], dq[mag_rows]])
        if len(F) == 0 or np.max(np.abs(F)) < tol:
            converged = True
            break
        V = v * np.exp(1j * theta)
        I = Y @ V
        dS_dth = 1j * np.diag(V) @ np.conj(np.diag(I) - Y @ np.diag(V))
        Vn = np.exp(1j * theta)
        dS_dv = np.diag(V) @ np.conj(Y @ np.diag(Vn)) + np.conj(np.diag(I)) @ np.diag(Vn)
        J = np.block([
            [dS_dth[np.ix_(ang_rows, ang_rows)].real,
             dS_dv[np.ix_(ang_rows, mag_rows)].real],
            [dS_dth[np.ix_(mag_rows, ang_rows)].imag,
             dS_dv[np.ix_(mag_rows, mag_rows)].imag],
        ])
        try:
            step = np.linalg.solve(J, F)
        except np.linalg.LinAlgError:
            return PowerFlowResult(False, v, theta, np.zeros(n), np.zeros(n),
                                   np.nan, it)
        theta[ang_rows] += step[: len(ang_rows)]
        v[mag_rows] += step[len(ang_rows):]
        if np.any(v <= 0) or not np.isfinite(v).all():
            return PowerFlowResult(False, v, theta, np.zeros(n), np.zeros(n),
                                   np.nan, it)
    if not converged:
        return PowerFlowResult(False, v, theta, np.zeros(n), np.zeros(n),
                               np.nan, it)
    S = _s_calc(Y, v, theta)
    slack_p = float(S.real[ref] + pd[ref])
    return PowerFlowResult(True, v, theta, S.real, S.imag, slack_p, it)


def complex_mismatch(case: GridCase, v, theta, pg_bus, qg_bus, pd=None, qd=None,
                     skip_branches=frozenset()) -> np.ndarray:
    """Per-bus S_gen - S_demand - S_network(v, theta); independent audit path."""
    if pd is None or qd is None:
        pd0, qd0 = case.demand_vectors()
        pd = pd0 if pd is None else np.asarray(pd)
        qd = qd0 if qd is None else np.asarray(qd)
    Y = ybus(case, skip_branches)
    S = _s_calc(Y, np.asarray(v), np.asarray(theta))
    return (np.asarray(pg_bus) - pd - S.real) + 1j * (np.asarray(qg_bus) - qd - S.imag)


# -- parsers -------------------------------------------------------------------


def parse_case(path) -> GridCase:
    """JSON or MATPOWER-subset text, sniffed from the content."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    head = text.lstrip()[:1]
    if head == "{":
        return _parse_json(text, path)
    return _parse_matpower(text, path)


def _parse_json(text: str, path) -> GridCase:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseError(f"{path}: invalid JSON: {exc}") from exc
    if doc.get("version") != 1:
        raise CaseError(f"{path}: unsupported case version {doc.get('version')}")
    refs = [b["id"] for b in doc["buses"] if b.get("reference")]
    declared = doc.get("reference_bus")
    if declared is not None:
        refs.append(declared)
    refs = sorted(set(refs))
    if len(refs) != 1:
        raise CaseError(f"{path}: exactly one reference bus required, got {refs}")
    try:
        buses = tuple(Bus(int(b["id"]), float(b["vmin"]), float(b["vmax"]),
                          float(b.get("gs", 0.0)), float(b.get("bs", 0.0)))
                      for b in doc["buses"])
        gens = tuple(Generator(
            int(g["id"]), int(g["bus"]), float(g["pmin"]), float(g["pmax"]),
            float(g["qmin"]), float(g["qmax"]),
            (float(g["cost"][0]), float(g["cost"][1]), float(g["cost"][2])),
            float(g.get("inertia", 4.0)), float(g.get("damping", 20.0)),
            float(g.get("xd_prime", 0.3)), float(g.get("vset", 1.0)),
            float(g.get("pg0", 0.0))) for g in doc["generators"])
        branches = tuple(Branch(int(b["from"]), int(b["to"]), float(b["r"]),
                                float(b["x"]), float(b.get("b", 0.0)),
                                float(b.get("rate", 0.0)))
                         for b in doc["branches"])
        demands = tuple(Demand(int(d["bus"]), float(d["p"]), float(d["q"]))
                        for d in doc["demands"])
    except (KeyError, TypeError, IndexError) as exc:
        raise CaseError(f"{path}: schema violation: {exc!r}") from exc
    return GridCase(doc.get("name", "case"), float(doc["base_mva"]),
                    float(doc.get("frequency_hz", 60.0)), int(refs[0]),
                    buses, gens, branches, demands)


_MATRIX_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\];", re.S)
_SCALAR_RE = re.compile(r"mpc\.(\w+)\s*=\s*([0-9.eE+-]+)\s*;")


def _parse_matpower(text: str, path) -> GridCase:
    text = re.sub(r"%[^\n]*", "", text)
    scalars = {m.group(1): float(m.group(2)) for m in _SCALAR_RE.finditer(text)}
    matrices: dict[str, list[list[float]]] = {}
    for m in _MATRIX_RE.finditer(text):
        rows = []
        for line in re.split(r"[;\n]", m.group(2)):
            vals = line.split()
            if vals:
                rows.append([float(v) for v in vals])
        matrices[m.group(1)] = rows
    for req in ("bus", "gen", "branch", "gencost"):
        if req not in matrices:
            raise CaseError(f"{path}: missing mpc.{req}")
    if "baseMVA" not in scalars:
        raise CaseError(f"{path}: missing mpc.baseMVA")
    base = scalars["baseMVA"]

    buses, demands, refs = [], [], []
    for row in matrices["bus"]:
        bus_id, bus_type = int(row[0]), int(row[1])
        pd, qd = row[2], row[3]
        gs, bs = row[4], row[5]
        vmax, vmin = row[11], row[12]
        buses.append(Bus(bus_id, vmin, vmax, gs / base, bs / base))
        if pd != 0.0 or qd != 0.0:
            demands.append(Demand(bus_id, pd / base, qd / base))
        if bus_type == 3:
            refs.append(bus_id)
    if len(refs) != 1:
        raise CaseError(f"{path}: exactly one reference bus required, got {refs}")

    gencost = matrices["gencost"]
    gendyn = matrices.get("gendyn", [])
    gens = []
    for k, row in enumerate(matrices["gen"]):
        if k >= len(gencost):
            raise CaseError(f"{path}: gencost row missing for generator {k + 1}")
        cost = gencost[k]
        if int(cost[0]) != 2 or int(cost[3]) != 3:
            raise CaseError(f"{path}: only quadratic (model 2, n=3) costs supported")
        c2, c1, c0 = cost[4], cost[5], cost[6]
        dyn = gendyn[k] if k < len(gendyn) else [4.0, 20.0, 0.3, row[1]]
        gens.append(Generator(
            k + 1, int(row[0]),
            row[9] / base, row[8] / base,      # Pmin, Pmax
            row[4] / base, row[3] / base,      # Qmin, Qmax
            (c2, c1, c0),
            dyn[0], dyn[1], dyn[2],
            row[5],                            # Vg
            (dyn[3] if len(dyn) > 3 else row[1]) / base))
    branches = []
    for row in matrices["branch"]:
        if len(row) >= 11 and int(row[10]) == 0:
            continue  # out of service
        branches.append(Branch(int(row[0]), int(row[1]), row[2], row[3],
                               row[4], row[5] / base))
    name = "case"
    fn = re.search(r"function\s+mpc\s*=\s*(\w+)", text)
    if fn:
        name = fn.group(1)
    return GridCase(name, base, scalars.get("nominal_frequency", 60.0),
                    refs[0], tuple(buses), tuple(gens), tuple(branches),
                    tuple(demands))
