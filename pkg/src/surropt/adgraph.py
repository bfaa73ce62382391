"""Scalar expression graphs with reverse-mode differentiation.

A graph is built incrementally from a fixed set of node kinds (arithmetic,
integer powers, and a few smooth activations), then sealed.  Sealing freezes
the node arrays, computes a level schedule so that forward/reverse sweeps run
as vectorized numpy operations per level, and derives point-independent
sparsity patterns for the Jacobian of all roots and for the weighted Hessian.

Node indices are topological by construction: children always have a smaller
index than their parent.  Sealed graphs are immutable; evaluation state lives
in a caller-owned :class:`Workspace`, so one sealed graph can serve several
concurrent evaluators.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Node opcodes.  The set is fixed; there is no user extension point.
CONST = 0
VAR = 1
ADD = 2
SUB = 3
MUL = 4
DIV = 5
POWI = 6
SQUARE = 7
NEG = 8
TANH = 9
SIGMOID = 10
EXP = 11
LOG = 12
SIN = 13
COS = 14

_UNARY = {NEG, SQUARE, POWI, TANH, SIGMOID, EXP, LOG, SIN, COS}
_BINARY = {ADD, SUB, MUL, DIV}

_OP_NAMES = {
    CONST: "const", VAR: "var", ADD: "add", SUB: "sub", MUL: "mul",
    DIV: "div", POWI: "powi", SQUARE: "square", NEG: "neg", TANH: "tanh",
    SIGMOID: "sigmoid", EXP: "exp", LOG: "log", SIN: "sin", COS: "cos",
}

# A root whose subgraph covers more than this fraction of all nodes is swept
# over the full schedule instead of a materialized per-root sub-schedule.
_FULL_SWEEP_FRACTION = 0.5


class GraphError(ValueError):
    """Structural misuse of an expression graph."""


class EvaluationError(ArithmeticError):
    """Domain violation during evaluation (log of non-positive, zero divide)."""

    def __init__(self, message: str, node: int):
        super().__init__(f"{message} at node {node}")
        self.node = node


@dataclass(frozen=True)
class SparsityPattern:
    """Coordinate-form sparsity, entries unique and (row, col) lex-sorted."""

    rows: np.ndarray
    cols: np.ndarray
    shape: tuple[int, int]

    def __len__(self) -> int:
        return len(self.rows)

    def as_set(self) -> set[tuple[int, int]]:
        return set(zip(self.rows.tolist(), self.cols.tolist()))


@dataclass
class Workspace:
    """Caller-owned scratch buffers for one evaluator."""

    val: np.ndarray
    dot: np.ndarray
    bar: np.ndarray
    bardot: np.ndarray


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _acc(arr, idx, vals, unique: bool):
    # buffered fancy add is ~10x faster but only valid without duplicates
    if unique:
        arr[idx] += vals
    else:
        np.add.at(arr, idx, vals)


@dataclass
class _Group:
    """All nodes of one opcode within one schedule level."""

    op: int
    idx: np.ndarray
    a: np.ndarray
    b: np.ndarray
    aux: np.ndarray
    a_unique: bool = True
    b_unique: bool = True


@dataclass
class _Family:
    """Roots that share one sweep schedule for Hessian accumulation."""

    root_positions: np.ndarray        # indices into the graph's root list
    schedule: list[_Group] | None     # None means the full schedule
    touched: np.ndarray | None        # nodes to reset (None: all)
    seeds: np.ndarray                 # variable ids to seed, sorted
    # per seed variable: (global pattern slots, variable-node ids to read)
    extract: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)


class ExprGraph:
    """Mutable expression-graph builder; immutable after :meth:`seal`."""

    def __init__(self, num_variables: int = 0):
        self._op: list[int] = []
        self._a: list[int] = []
        self._b: list[int] = []
        self._aux: list[float] = []
        self._roots: list[int] = []
        self._num_vars = int(num_variables)
        self._var_nodes: dict[int, int] = {}
        self._const_nodes: dict[float, int] = {}
        self._sealed = False

    # -- construction ------------------------------------------------------

    @property
    def num_variables(self) -> int:
        return self._num_vars

    @property
    def num_nodes(self) -> int:
        return len(self._op)

    @property
    def num_roots(self) -> int:
        return len(self._roots)

    @property
    def sealed(self) -> bool:
        return self._sealed

    def register_variables(self, count: int) -> None:
        if self._sealed:
            raise GraphError("graph is sealed")
        self._num_vars += int(count)

    def _push(self, op: int, a: int, b: int, aux: float) -> int:
        if self._sealed:
            raise GraphError("graph is sealed")
        n = len(self._op)
        if op in _BINARY:
            if not (0 <= a < n and 0 <= b < n):
                raise GraphError(f"child index out of range for node {n}")
        elif op in _UNARY:
            if not (0 <= a < n):
                raise GraphError(f"child index out of range for node {n}")
        self._op.append(op)
        self._a.append(a)
        self._b.append(b)
        self._aux.append(aux)
        return n

    def constant(self, value: float) -> int:
        value = float(value)
        node = self._const_nodes.get(value)
        if node is None:
            node = self._push(CONST, -1, -1, value)
            self._const_nodes[value] = node
        return node

    def var(self, index: int) -> int:
        if not 0 <= index < self._num_vars:
            raise GraphError(f"variable {index} not registered")
        node = self._var_nodes.get(index)
        if node is None:
            node = self._push(VAR, index, -1, 0.0)
            self._var_nodes[index] = node
        return node

    def add(self, a: int, b: int) -> int:
        return self._push(ADD, a, b, 0.0)

    def sub(self, a: int, b: int) -> int:
        return self._push(SUB, a, b, 0.0)

    def mul(self, a: int, b: int) -> int:
        return self._push(MUL, a, b, 0.0)

    def div(self, a: int, b: int) -> int:
        return self._push(DIV, a, b, 0.0)

    def powi(self, a: int, exponent: int) -> int:
        return self._push(POWI, a, -1, float(int(exponent)))

    def square(self, a: int) -> int:
        return self._push(SQUARE, a, -1, 0.0)

    def neg(self, a: int) -> int:
        return self._push(NEG, a, -1, 0.0)

    def tanh(self, a: int) -> int:
        return self._push(TANH, a, -1, 0.0)

    def sigmoid(self, a: int) -> int:
        return self._push(SIGMOID, a, -1, 0.0)

    def exp(self, a: int) -> int:
        return self._push(EXP, a, -1, 0.0)

    def log(self, a: int) -> int:
        return self._push(LOG, a, -1, 0.0)

    def sin(self, a: int) -> int:
        return self._push(SIN, a, -1, 0.0)

    def cos(self, a: int) -> int:
        return self._push(COS, a, -1, 0.0)

    def add_root(self, node: int) -> int:
        if self._sealed:
            raise GraphError("graph is sealed")
        if not 0 <= node < len(self._op):
            raise GraphError(f"root node {node} out of range")
        self._roots.append(node)
        return len(self._roots) - 1

    # -- sealing -----------------------------------------------------------

    def seal(self) -> None:
        """Freeze structure, build the level schedule and sparsity patterns."""
        if self._sealed:
            return
        self._sealed = True
        n = len(self._op)
        self.op = np.asarray(self._op, dtype=np.uint8) if n else np.zeros(0, np.uint8)
        self.a = np.asarray(self._a, dtype=np.int64) if n else np.zeros(0, np.int64)
        self.b = np.asarray(self._b, dtype=np.int64) if n else np.zeros(0, np.int64)
        self.aux = np.asarray(self._aux, dtype=np.float64) if n else np.zeros(0)
        self.roots = np.asarray(self._roots, dtype=np.int64)

        level = np.zeros(n, dtype=np.int64)
        for i in range(n):
            o = self._op[i]
            if o == CONST or o == VAR:
                continue
            la = level[self._a[i]]
            level[i] = (max(la, level[self._b[i]]) if o in _BINARY else la) + 1
        self._levels = level

        inner = np.nonzero((self.op != CONST) & (self.op != VAR))[0]
        order = np.argsort(level[inner], kind="stable")
        inner = inner[order]
        cuts = np.nonzero(np.diff(level[inner]))[0] + 1
        self._inner_by_level = {int(level[ch[0]]): ch for ch in np.split(inner, cuts)} \
            if len(inner) else {}

        # Base values: constants prefilled, variable slots listed for scatter.
        self._val_template = np.zeros(n)
        cmask = self.op == CONST
        self._val_template[cmask] = self.aux[cmask]
        vmask = self.op == VAR
        self._var_node_ids = np.nonzero(vmask)[0]
        self._var_node_vars = self.a[self._var_node_ids]
        # variable id -> node id (or -1 when the variable is never referenced)
        self._node_of_var = np.full(max(self._num_vars, 1), -1, dtype=np.int64)
        self._node_of_var[self._var_node_vars] = self._var_node_ids

        self._schedule = self._build_schedule(np.arange(n))
        self._build_varsets()
        self._build_sweep_plans()

    def _build_schedule(self, nodes: np.ndarray) -> list[_Group]:
        nodes = nodes[(self.op[nodes] != CONST) & (self.op[nodes] != VAR)]
        if len(nodes) == 0:
            return []
        order = np.lexsort((self.op[nodes], self._levels[nodes]))
        nodes = nodes[order]
        keys = self._levels[nodes] * 64 + self.op[nodes]
        cuts = np.nonzero(np.diff(keys))[0] + 1
        groups = []
        for chunk in np.split(nodes, cuts):
            op = int(self.op[chunk[0]])
            ga, gb = self.a[chunk], self.b[chunk]
            au = len(np.unique(ga)) == len(ga)
            bu = op not in _BINARY or len(np.unique(gb)) == len(gb)
            groups.append(_Group(op, chunk, ga, gb, self.aux[chunk], au, bu))
        return groups

    def node_varsets(self, nodes) -> list[tuple[frozenset, frozenset]]:
        """(linear, nonlinear) variable sets for chosen nodes.

        Runs the same symbolic propagation sealing uses, but works on an
        unsealed graph; used by embedders to predict structural deltas.
        """
        lin, nl = self._propagate_varsets()
        return [(lin[int(i)], nl[int(i)]) for i in nodes]

    def _build_varsets(self) -> None:
        lin, nl = self._propagate_varsets()
        self._root_lin = [lin[r] for r in self._roots]
        self._root_nl = [nl[r] for r in self._roots]

    def _propagate_varsets(self):
        """Per-node linear / nonlinear variable sets by symbolic propagation.

        Sets are interned so wide graphs whose nodes share identical variable
        support (every hidden node of a dense network layer, say) cost one
        object, not one set per node.
        """
        intern: dict[frozenset, frozenset] = {}
        empty = frozenset()
        intern[empty] = empty

        def get(s: frozenset) -> frozenset:
            return intern.setdefault(s, s)

        n = len(self._op)
        lin: list[frozenset] = [empty] * n
        nl: list[frozenset] = [empty] * n
        op, a, b, aux = self._op, self._a, self._b, self._aux
        for i in range(n):
            o = op[i]
            if o == CONST:
                continue
            if o == VAR:
                lin[i] = get(frozenset((a[i],)))
            elif o in (ADD, SUB):
                la, lb = lin[a[i]], lin[b[i]]
                na, nb = nl[a[i]], nl[b[i]]
                nu = na if nb <= na else (nb if na <= nb else get(na | nb))
                lu = la if lb <= la else (lb if la <= lb else get(la | lb))
                nl[i] = nu
                lin[i] = lu if not (lu & nu) else get(lu - nu)
            elif o == NEG or (o == POWI and int(aux[i]) == 1):
                lin[i], nl[i] = lin[a[i]], nl[a[i]]
            elif o == POWI and int(aux[i]) == 0:
                pass  # constant one
            elif o in (MUL, DIV):
                va = (lin[a[i]] | nl[a[i]]) if nl[a[i]] else lin[a[i]]
                vb = (lin[b[i]] | nl[b[i]]) if nl[b[i]] else lin[b[i]]
                if va and vb:
                    nl[i] = get(frozenset(va | vb))
                elif vb and o == DIV:
                    nl[i] = get(frozenset(vb))
                elif va:
                    lin[i], nl[i] = lin[a[i]], nl[a[i]]
                else:
                    lin[i], nl[i] = lin[b[i]], nl[b[i]]
            else:
                # genuinely nonlinear unary node
                s = (lin[a[i]] | nl[a[i]]) if lin[a[i]] else nl[a[i]]
                nl[i] = get(s if isinstance(s, frozenset) else frozenset(s))
                lin[i] = empty
        return lin, nl

    def _reachable(self, root: int) -> tuple[np.ndarray, bool]:
        """Subgraph mask of one root; True flag means 'use the full schedule'."""
        n = len(self.op)
        reach = np.zeros(n, dtype=bool)
        reach[root] = True
        budget = int(_FULL_SWEEP_FRACTION * n)
        touched = 0
        for lev in range(int(self._levels[root]), 0, -1):
            sel = self._inner_by_level.get(lev)
            if sel is None:
                continue
            hit = sel[reach[sel]]
            if len(hit) == 0:
                continue
            reach[self.a[hit]] = True
            bin_hit = hit[np.isin(self.op[hit], (ADD, SUB, MUL, DIV))]
            reach[self.b[bin_hit]] = True
            touched += len(hit)
            if touched > budget:
                return reach, True
        return reach, False

    def _build_sweep_plans(self) -> None:
        # Jacobian pattern + per-root sweep plans, then Hessian families.
        rows, cols = [], []
        self._jac_slices = []
        self._root_plans: list[tuple[list[_Group], np.ndarray] | None] = []
        small_union = np.zeros(len(self.op), dtype=bool)
        small_roots, big_roots = [], []
        pos = 0
        for k, r in enumerate(self._roots):
            jvars = np.fromiter(sorted(self._root_lin[k] | self._root_nl[k]),
                                dtype=np.int64,
                                count=len(self._root_lin[k] | self._root_nl[k]))
            rows.append(np.full(len(jvars), k, dtype=np.int64))
            cols.append(jvars)
            self._jac_slices.append((pos, pos + len(jvars)))
            pos += len(jvars)
            reach, big = self._reachable(r)
            if big:
                self._root_plans.append(None)
                big_roots.append(k)
            else:
                touched = np.nonzero(reach)[0]
                self._root_plans.append((self._build_schedule(touched), touched))
                small_union |= reach
                small_roots.append(k)
        self.jacobian_pattern = SparsityPattern(
            np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64),
            np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64),
            (len(self._roots), self._num_vars),
        )

        # Hessian pattern: union over roots of lower-tri (nonlinear set)^2.
        entries: dict[tuple[int, int], int] = {}
        per_root_entries: list[list[tuple[int, int]]] = []
        for nlset in self._root_nl:
            sv = sorted(nlset)
            mine = []
            for j, vj in enumerate(sv):
                for vi in sv[j:]:
                    entries.setdefault((vi, vj), 0)
                    mine.append((vi, vj))
            per_root_entries.append(mine)
        keys = sorted(entries)
        for slot, key in enumerate(keys):
            entries[key] = slot
        hr = np.array([k[0] for k in keys], dtype=np.int64)
        hc = np.array([k[1] for k in keys], dtype=np.int64)
        self.hessian_pattern = SparsityPattern(hr, hc, (self._num_vars,) * 2)

        self._families: list[_Family] = []
        if small_roots:
            touched = np.nonzero(small_union)[0]
            self._families.append(self._make_family(
                small_roots, self._build_schedule(touched), touched,
                entries, per_root_entries))
        if big_roots:
            self._families.append(self._make_family(
                big_roots, None, None, entries, per_root_entries))

    def _make_family(self, members, schedule, touched, entries,
                     per_root_entries) -> _Family:
        seeds: set[int] = set()
        for k in members:
            seeds |= self._root_nl[k]
        fam = _Family(np.asarray(members, dtype=np.int64), schedule, touched,
                      np.asarray(sorted(seeds), dtype=np.int64))
        col_out: dict[int, list[int]] = {}
        col_node: dict[int, list[int]] = {}
        seen: set[tuple[int, int]] = set()
        for k in members:
            for (vi, vj) in per_root_entries[k]:
                if (vi, vj) in seen:
                    continue
                seen.add((vi, vj))
                col_out.setdefault(vj, []).append(entries[(vi, vj)])
                col_node.setdefault(vj, []).append(self._node_of_var[vi])
        for vj in col_out:
            fam.extract[vj] = (np.asarray(col_out[vj], dtype=np.int64),
                               np.asarray(col_node[vj], dtype=np.int64))
        return fam

    # -- per-root structure accessors ----------------------------------------

    def root_vars(self, k: int) -> frozenset:
        """Variables the k-th root depends on (sealed graphs only)."""
        return self._root_lin[k] | self._root_nl[k]

    def root_nonlinear_vars(self, k: int) -> frozenset:
        """Variables entering the k-th root nonlinearly."""
        return self._root_nl[k]

    def jacobian_row_slice(self, k: int) -> tuple[int, int]:
        """Slice of the Jacobian value vector belonging to root k."""
        return self._jac_slices[k]

    # -- evaluation sweeps ---------------------------------------------------

    def workspace(self) -> Workspace:
        n = len(self.op)
        return Workspace(np.zeros(n), np.zeros(n), np.zeros(n), np.zeros(n))

    def _check_sealed_point(self, point) -> np.ndarray:
        if not self._sealed:
            raise GraphError("graph must be sealed before evaluation")
        point = np.asarray(point, dtype=np.float64)
        if point.shape != (self._num_vars,):
            raise GraphError(
                f"point has shape {point.shape}, expected ({self._num_vars},)")
        return point

    def _forward(self, point: np.ndarray, val: np.ndarray) -> None:
        np.copyto(val, self._val_template)
        val[self._var_node_ids] = point[self._var_node_vars]
        for g in self._schedule:
            o = g.op
            if o == ADD:
                val[g.idx] = val[g.a] + val[g.b]
            elif o == SUB:
                val[g.idx] = val[g.a] - val[g.b]
            elif o == MUL:
                val[g.idx] = val[g.a] * val[g.b]
            elif o == DIV:
                den = val[g.b]
                if np.any(den == 0.0):
                    bad = int(g.idx[np.nonzero(den == 0.0)[0][0]])
                    raise EvaluationError("division by zero", bad)
                val[g.idx] = val[g.a] / den
            elif o == POWI:
                val[g.idx] = self._powi_values(val[g.a], g)
            elif o == SQUARE:
                va = val[g.a]
                val[g.idx] = va * va
            elif o == NEG:
                val[g.idx] = -val[g.a]
            elif o == TANH:
                val[g.idx] = np.tanh(val[g.a])
            elif o == SIGMOID:
                val[g.idx] = _sigmoid(val[g.a])
            elif o == EXP:
                val[g.idx] = np.exp(val[g.a])
            elif o == LOG:
                va = val[g.a]
                if np.any(va <= 0.0):
                    bad = int(g.idx[np.nonzero(va <= 0.0)[0][0]])
                    raise EvaluationError("log of non-positive value", bad)
                val[g.idx] = np.log(va)
            elif o == SIN:
                val[g.idx] = np.sin(val[g.a])
            elif o == COS:
                val[g.idx] = np.cos(val[g.a])

    @staticmethod
    def _powi_values(base: np.ndarray, g: _Group) -> np.ndarray:
        exps = g.aux
        neg = exps < 0
        if np.any(neg & (base == 0.0)):
            bad = int(g.idx[np.nonzero(neg & (base == 0.0))[0][0]])
            raise EvaluationError("zero base with negative exponent", bad)
        return np.power(base, exps)

    def evaluate(self, point, workspace: Workspace | None = None) -> np.ndarray:
        """Values of all roots at ``point`` (forward sweep, topological)."""
        point = self._check_sealed_point(point)
        ws = workspace or self.workspace()
        self._forward(point, ws.val)
        return ws.val[self.roots].copy()

    def _forward_tangent(self, schedule, val, dot) -> None:
        for g in schedule:
            o = g.op
            if o == ADD:
                dot[g.idx] = dot[g.a] + dot[g.b]
            elif o == SUB:
                dot[g.idx] = dot[g.a] - dot[g.b]
            elif o == MUL:
                dot[g.idx] = dot[g.a] * val[g.b] + val[g.a] * dot[g.b]
            elif o == DIV:
                dot[g.idx] = (dot[g.a] - val[g.idx] * dot[g.b]) / val[g.b]
            elif o == POWI:
                k = g.aux
                with np.errstate(divide="ignore", invalid="ignore"):
                    d = k * np.power(val[g.a], k - 1)
                d[k == 0] = 0.0
                dot[g.idx] = d * dot[g.a]
            elif o == SQUARE:
                dot[g.idx] = 2.0 * val[g.a] * dot[g.a]
            elif o == NEG:
                dot[g.idx] = -dot[g.a]
            elif o == TANH:
                dot[g.idx] = (1.0 - val[g.idx] ** 2) * dot[g.a]
            elif o == SIGMOID:
                s = val[g.idx]
                dot[g.idx] = s * (1.0 - s) * dot[g.a]
            elif o == EXP:
                dot[g.idx] = val[g.idx] * dot[g.a]
            elif o == LOG:
                dot[g.idx] = dot[g.a] / val[g.a]
            elif o == SIN:
                dot[g.idx] = np.cos(val[g.a]) * dot[g.a]
            elif o == COS:
                dot[g.idx] = -np.sin(val[g.a]) * dot[g.a]

    def _reverse(self, schedule, val, bar) -> None:
        """First-order adjoint sweep; ``bar`` must be pre-seeded."""
        for g in reversed(schedule):
            o = g.op
            w = bar[g.idx]
            if o == ADD:
                _acc(bar, g.a, w, g.a_unique)
                _acc(bar, g.b, w, g.b_unique)
            elif o == SUB:
                _acc(bar, g.a, w, g.a_unique)
                _acc(bar, g.b, -w, g.b_unique)
            elif o == MUL:
                _acc(bar, g.a, w * val[g.b], g.a_unique)
                _acc(bar, g.b, w * val[g.a], g.b_unique)
            elif o == DIV:
                vb = val[g.b]
                _acc(bar, g.a, w / vb, g.a_unique)
                _acc(bar, g.b, -w * val[g.idx] / vb, g.b_unique)
            elif o == POWI:
                k = g.aux
                with np.errstate(divide="ignore", invalid="ignore"):
                    d = k * np.power(val[g.a], k - 1)
                d[k == 0] = 0.0
                _acc(bar, g.a, w * d, g.a_unique)
            elif o == SQUARE:
                _acc(bar, g.a, 2.0 * val[g.a] * w, g.a_unique)
            elif o == NEG:
                _acc(bar, g.a, -w, g.a_unique)
            elif o == TANH:
                _acc(bar, g.a, (1.0 - val[g.idx] ** 2) * w, g.a_unique)
            elif o == SIGMOID:
                s = val[g.idx]
                _acc(bar, g.a, s * (1.0 - s) * w, g.a_unique)
            elif o == EXP:
                _acc(bar, g.a, val[g.idx] * w, g.a_unique)
            elif o == LOG:
                _acc(bar, g.a, w / val[g.a], g.a_unique)
            elif o == SIN:
                _acc(bar, g.a, np.cos(val[g.a]) * w, g.a_unique)
            elif o == COS:
                _acc(bar, g.a, -np.sin(val[g.a]) * w, g.a_unique)

    def _reverse_pair(self, schedule, val, dot, bar, bardot) -> None:
        """Second-order adjoint sweep: propagates (bar, d bar/dt) together."""
        for g in reversed(schedule):
            o = g.op
            w = bar[g.idx]
            wd = bardot[g.idx]
            if o == ADD:
                _acc(bar, g.a, w, g.a_unique)
                _acc(bar, g.b, w, g.b_unique)
                _acc(bardot, g.a, wd, g.a_unique)
                _acc(bardot, g.b, wd, g.b_unique)
            elif o == SUB:
                _acc(bar, g.a, w, g.a_unique)
                _acc(bar, g.b, -w, g.b_unique)
                _acc(bardot, g.a, wd, g.a_unique)
                _acc(bardot, g.b, -wd, g.b_unique)
            elif o == MUL:
                va, vb = val[g.a], val[g.b]
                _acc(bar, g.a, w * vb, g.a_unique)
                _acc(bar, g.b, w * va, g.b_unique)
                _acc(bardot, g.a, wd * vb + w * dot[g.b], g.a_unique)
                _acc(bardot, g.b, wd * va + w * dot[g.a], g.b_unique)
            elif o == DIV:
                vb = val[g.b]
                q = val[g.idx]
                _acc(bar, g.a, w / vb, g.a_unique)
                _acc(bar, g.b, -w * q / vb, g.b_unique)
                _acc(bardot, g.a, wd / vb - w * dot[g.b] / vb ** 2, g.a_unique)
                _acc(bardot, g.b,
                     -wd * q / vb + w * (2.0 * q * dot[g.b] - dot[g.a]) / vb ** 2,
                     g.b_unique)
            elif o == POWI:
                k = g.aux
                va = val[g.a]
                with np.errstate(divide="ignore", invalid="ignore"):
                    d1 = k * np.power(va, k - 1)
                    d2 = k * (k - 1) * np.power(va, k - 2)
                d1[k == 0] = 0.0
                d2[(k == 0) | (k == 1)] = 0.0
                _acc(bar, g.a, w * d1, g.a_unique)
                _acc(bardot, g.a, wd * d1 + w * d2 * dot[g.a], g.a_unique)
            elif o == SQUARE:
                va = val[g.a]
                _acc(bar, g.a, 2.0 * va * w, g.a_unique)
                _acc(bardot, g.a, 2.0 * (va * wd + dot[g.a] * w), g.a_unique)
            elif o == NEG:
                _acc(bar, g.a, -w, g.a_unique)
                _acc(bardot, g.a, -wd, g.a_unique)
            elif o == TANH:
                t = val[g.idx]
                sp = 1.0 - t ** 2
                _acc(bar, g.a, sp * w, g.a_unique)
                _acc(bardot, g.a, sp * wd - 2.0 * t * dot[g.idx] * w, g.a_unique)
            elif o == SIGMOID:
                s = val[g.idx]
                sp = s * (1.0 - s)
                _acc(bar, g.a, sp * w, g.a_unique)
                _acc(bardot, g.a, sp * wd + (1.0 - 2.0 * s) * dot[g.idx] * w,
                     g.a_unique)
            elif o == EXP:
                e = val[g.idx]
                _acc(bar, g.a, e * w, g.a_unique)
                _acc(bardot, g.a, e * wd + dot[g.idx] * w, g.a_unique)
            elif o == LOG:
                va = val[g.a]
                _acc(bar, g.a, w / va, g.a_unique)
                _acc(bardot, g.a, wd / va - w * dot[g.a] / va ** 2, g.a_unique)
            elif o == SIN:
                c = np.cos(val[g.a])
                _acc(bar, g.a, c * w, g.a_unique)
                _acc(bardot, g.a, c * wd - val[g.idx] * dot[g.a] * w, g.a_unique)
            elif o == COS:
                s = np.sin(val[g.a])
                _acc(bar, g.a, -s * w, g.a_unique)
                _acc(bardot, g.a, -s * wd - val[g.idx] * dot[g.a] * w, g.a_unique)

    def jacobian(self, point, workspace: Workspace | None = None):
        """(pattern, values): one reverse sweep per root at ``point``."""
        point = self._check_sealed_point(point)
        ws = workspace or self.workspace()
        self._forward(point, ws.val)
        out = np.zeros(len(self.jacobian_pattern.rows))
        for k, r in enumerate(self._roots):
            lo, hi = self._jac_slices[k]
            if hi == lo:
                continue
            plan = self._root_plans[k]
            if plan is None:
                ws.bar[:] = 0.0
                sched = self._schedule
            else:
                sched, touched = plan
                ws.bar[touched] = 0.0
            ws.bar[r] = 1.0
            self._reverse(sched, ws.val, ws.bar)
            out[lo:hi] = ws.bar[self._node_of_var[self.jacobian_pattern.cols[lo:hi]]]
        return self.jacobian_pattern, out

    def hessian_lagrangian(self, point, obj_factor, multipliers,
                           workspace: Workspace | None = None):
        """(pattern, values) of the lower triangle of the weighted Hessian.

        Root 0 is weighted by ``obj_factor``; roots 1.. by ``multipliers``.
        The pattern is point-independent and shared across calls.
        """
        point = self._check_sealed_point(point)
        multipliers = np.asarray(multipliers, dtype=np.float64)
        if len(multipliers) != max(len(self._roots) - 1, 0):
            raise GraphError(
                f"expected {len(self._roots) - 1} multipliers, got {len(multipliers)}")
        weights = np.concatenate(([float(obj_factor)], multipliers)) \
            if len(self._roots) else np.zeros(0)
        ws = workspace or self.workspace()
        self._forward(point, ws.val)
        out = np.zeros(len(self.hessian_pattern.rows))
        for fam in self._families:
            w_fam = weights[fam.root_positions]
            if not np.any(w_fam):
                continue
            sched = self._schedule if fam.schedule is None else fam.schedule
            root_nodes = self.roots[fam.root_positions]
            for v in fam.seeds:
                slots, unodes = fam.extract[int(v)]
                if fam.touched is None:
                    ws.dot[:] = 0.0
                    ws.bar[:] = 0.0
                    ws.bardot[:] = 0.0
                else:
                    ws.dot[fam.touched] = 0.0
                    ws.bar[fam.touched] = 0.0
                    ws.bardot[fam.touched] = 0.0
                ws.dot[self._node_of_var[v]] = 1.0
                self._forward_tangent(sched, ws.val, ws.dot)
                np.add.at(ws.bar, root_nodes, w_fam)
                self._reverse_pair(sched, ws.val, ws.dot, ws.bar, ws.bardot)
                out[slots] += ws.bardot[unodes]
        return self.hessian_pattern, out

    # -- debug dump ----------------------------------------------------------

    def dump_sexpr(self, path) -> None:
        """Write one S-expression per root; repeated subtrees become (ref i)."""
        seen: set[int] = set()

        def render(i: int) -> str:
            if i in seen:
                return f"(ref {i})"
            seen.add(i)
            o = self._op[i]
            if o == CONST:
                return f"(const {self._aux[i]!r})"
            if o == VAR:
                return f"(var {self._a[i]})"
            name = _OP_NAMES[o]
            if o == POWI:
                return f"(powi {render(self._a[i])} {int(self._aux[i])})"
            if o in _BINARY:
                return f"({name} {render(self._a[i])} {render(self._b[i])})"
            return f"({name} {render(self._a[i])})"

        with open(path, "w", encoding="utf-8") as fh:
            for k, r in enumerate(self._roots):
                fh.write(f"(root {k} {render(r)})\n")


@dataclass
class FdReport:
    """Outcome of a finite-difference cross-check of graph derivatives."""

    max_rel_jacobian: float
    worst_jacobian: tuple[int, int]
    max_rel_hessian: float
    worst_hessian: tuple[int, int]
    nan_flags: bool


def fd_check(graph: ExprGraph, point, step: float = 1e-6) -> FdReport:
    """Central-difference check of Jacobian and weighted Hessian.

    Dense comparison, so intended for modest graphs.  Domain failures during
    any probe are reported through ``nan_flags`` instead of raising.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    point = np.asarray(point, dtype=np.float64)
    n = graph.num_variables
    m = graph.num_roots
    nan = False

    def probe_values(x):
        nonlocal nan
        try:
            return graph.evaluate(x)
        except EvaluationError:
            nan = True
            return np.full(m, np.nan)

    def probe_grad(x):
        nonlocal nan
        try:
            _, vals = graph.jacobian(x)
        except EvaluationError:
            nan = True
            return np.full(n, np.nan)
        dense = np.zeros((m, n))
        jp = graph.jacobian_pattern
        dense[jp.rows, jp.cols] = vals
        return dense.sum(axis=0)

    jp, jvals = graph.jacobian(point)
    ad_jac = np.zeros((m, n))
    ad_jac[jp.rows, jp.cols] = jvals
    fd_jac = np.zeros((m, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        fd_jac[:, j] = (probe_values(point + e) - probe_values(point - e)) / (2 * step)

    ones = np.ones(max(m - 1, 0))
    hp, hvals = graph.hessian_lagrangian(point, 1.0, ones)
    ad_hess = np.zeros((n, n))
    ad_hess[hp.rows, hp.cols] = hvals
    ad_hess = ad_hess + np.tril(ad_hess, -1).T
    fd_hess = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        fd_hess[:, j] = (probe_grad(point + e) - probe_grad(point - e)) / (2 * step)
    fd_hess = 0.5 * (fd_hess + fd_hess.T)

    def worst(ad, fd):
        err = np.abs(ad - fd) / np.maximum(1.0, np.maximum(np.abs(ad), np.abs(fd)))
        err = np.where(np.isnan(err), 0.0, err)
        flat = int(np.argmax(err))
        loc = np.unravel_index(flat, err.shape)
        return float(err[loc]), (int(loc[0]), int(loc[1]))

    mj, wj = worst(ad_jac, fd_jac)
    mh, wh = worst(ad_hess, fd_hess)
    if np.isnan(fd_jac).any() or np.isnan(fd_hess).any():
        nan = True
    return FdReport(mj, wj, mh, wh, nan)
