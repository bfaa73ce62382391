"""NLP model container: variables, bounds, graph- and operator-backed rows.

The model collects an objective expression, constraint rows that are either
expression-graph roots or blocks of an opaque vector operator, free-form tags
per row, and structural metadata.  ``canonicalize`` converts any model into
the equality-plus-bounds form the interior-point solver consumes: every
inequality row gains a bounded slack variable, and fixed variables become
free variables pinned by an explicit equality row.  ``structure_report``
produces the variable/constraint/nonzero accounting used by the benchmark
tables.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .adgraph import EvaluationError, ExprGraph


class ModelError(ValueError):
    """Structural misuse of an NLP model."""


@dataclass
class ExternalOperator:
    """Opaque vector function with callback oracles.

    ``jacobian`` returns a dense (output_dim x input_dim) block.
    ``weighted_hessian`` returns the symmetric Hessian of ``w . f`` as a
    dense (input_dim x input_dim) array; only its lower triangle is read.
    """

    input_dim: int
    output_dim: int
    evaluate: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    weighted_hessian: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    has_hessian: bool = True
    name: str = "operator"

    def __post_init__(self):
        if self.weighted_hessian is None:
            self.has_hessian = False


@dataclass
class _GraphRow:
    node: int
    lower: float
    upper: float
    tag: str | None
    root_pos: int = -1  # assigned at seal


@dataclass
class _OpBlock:
    operator: ExternalOperator
    input_vars: np.ndarray
    output_vars: np.ndarray | None
    lower: np.ndarray
    upper: np.ndarray
    tag: str | None
    first_row: int


class NlpModel:
    """Mutable model builder; sealed before reporting or solving."""

    def __init__(self):
        self.graph = ExprGraph()
        self.names: list[str] = []
        self.lower: list[float] = []
        self.upper: list[float] = []
        self.start: list[float] = []
        self._objective_node: int | None = None
        self._rows: list = []          # _GraphRow | ("op", block_idx, j)
        self._graph_rows: list[_GraphRow] = []
        self._op_blocks: list[_OpBlock] = []
        self._floating: list[int] = []  # expression nodes kept evaluable
        self._sealed = False
        self._node_root: dict[int, int] = {}

    # -- construction --------------------------------------------------------

    @property
    def num_variables(self) -> int:
        return len(self.lower)

    @property
    def num_rows(self) -> int:
        return len(self._rows)

    @property
    def sealed(self) -> bool:
        return self._sealed

    def add_variable(self, lower=-np.inf, upper=np.inf, start=None,
                     name=None) -> int:
        if self._sealed:
            raise ModelError("model is sealed")
        lower, upper = float(lower), float(upper)
        if lower > upper:
            raise ModelError(f"inverted bounds ({lower}, {upper})")
        if start is None:
            if np.isfinite(lower) and np.isfinite(upper):
                start = 0.5 * (lower + upper)
            else:
                start = min(max(0.0, lower), upper)
        start = float(min(max(float(start), lower), upper))
        idx = len(self.lower)
        self.lower.append(lower)
        self.upper.append(upper)
        self.start.append(start)
        self.names.append(name if name is not None else f"x{idx}")
        self.graph.register_variables(1)
        return idx

    def set_objective(self, node: int) -> None:
        if self._sealed:
            raise ModelError("model is sealed")
        self._objective_node = int(node)

    def add_constraint(self, node: int, lower: float, upper: float,
                       tag: str | None = None) -> int:
        if self._sealed:
            raise ModelError("model is sealed")
        lower, upper = float(lower), float(upper)
        if lower > upper:
            raise ModelError(f"inverted row bounds ({lower}, {upper})")
        row = _GraphRow(int(node), lower, upper, tag)
        self._graph_rows.append(row)
        self._rows.append(row)
        return len(self._rows) - 1

    def add_operator_constraint(self, operator: ExternalOperator, input_vars,
                                output_vars=None, bounds=None,
                                tag: str | None = None) -> range:
        """Rows y_j - f_j(x) = 0 when output variables are given, else
        bounded rows lb_j <= f_j(x) <= ub_j."""
        if self._sealed:
            raise ModelError("model is sealed")
        input_vars = np.asarray(input_vars, dtype=np.int64)
        if len(input_vars) != operator.input_dim:
            raise ModelError(
                f"operator expects {operator.input_dim} inputs, got {len(input_vars)}")
        if np.any(input_vars < 0) or np.any(input_vars >= self.num_variables):
            raise ModelError("operator input variable out of range")
        m = operator.output_dim
        if output_vars is not None:
            output_vars = np.asarray(output_vars, dtype=np.int64)
            if len(output_vars) != m:
                raise ModelError(
                    f"operator has {m} outputs, got {len(output_vars)} output variables")
            if set(input_vars.tolist()) & set(output_vars.tolist()):
                raise ModelError("operator input and output variables overlap")
            lower = np.zeros(m)
            upper = np.zeros(m)
        else:
            if bounds is None:
                raise ModelError("bounds required when no output variables given")
            lower = np.asarray(bounds[0], dtype=np.float64) * np.ones(m)
            upper = np.asarray(bounds[1], dtype=np.float64) * np.ones(m)
            if np.any(lower > upper):
                raise ModelError("inverted operator row bounds")
        first = len(self._rows)
        block = _OpBlock(operator, input_vars, output_vars, lower, upper, tag, first)
        self._op_blocks.append(block)
        for j in range(m):
            self._rows.append(("op", len(self._op_blocks) - 1, j))
        return range(first, first + m)

    def register_expression(self, node: int) -> None:
        """Keep a floating expression evaluable after sealing."""
        if self._sealed:
            raise ModelError("model is sealed")
        self._floating.append(int(node))

    def seal(self) -> None:
        if self._sealed:
            return
        obj = self._objective_node
        if obj is None:
            obj = self.graph.constant(0.0)
            self._objective_node = obj
        self.graph.add_root(obj)
        for row in self._graph_rows:
            row.root_pos = self.graph.add_root(row.node)
        for node in self._floating:
            if node not in self._node_root:
                self._node_root[node] = self.graph.add_root(node)
        self.graph.seal()
        self._sealed = True

    # -- evaluation helpers ----------------------------------------------------

    def expression_values(self, nodes, point) -> np.ndarray:
        """Evaluate registered floating expressions at a point."""
        if not self._sealed:
            raise ModelError("seal the model first")
        vals = self.graph.evaluate(point)
        return np.array([vals[self._node_root[int(n)]] for n in nodes])

    def expression_root_positions(self, nodes) -> np.ndarray:
        return np.array([self._node_root[int(n)] for n in nodes], dtype=np.int64)

    def row_bounds(self, i: int) -> tuple[float, float]:
        row = self._rows[i]
        if isinstance(row, _GraphRow):
            return row.lower, row.upper
        _, bi, j = row
        blk = self._op_blocks[bi]
        return float(blk.lower[j]), float(blk.upper[j])

    def row_tag(self, i: int) -> str | None:
        row = self._rows[i]
        if isinstance(row, _GraphRow):
            return row.tag
        return self._op_blocks[row[1]].tag


# -- structure report ---------------------------------------------------------


@dataclass
class TagCount:
    rows: int = 0
    jacobian_nnz: int = 0


@dataclass
class StructureReport:
    num_variables: int
    num_constraints: int
    jacobian_nnz: int
    hessian_nnz: int
    per_tag: dict[str, TagCount] = field(default_factory=dict)

    def delta(self, other: "StructureReport") -> tuple[int, int, int, int]:
        return (self.num_variables - other.num_variables,
                self.num_constraints - other.num_constraints,
                self.jacobian_nnz - other.jacobian_nnz,
                self.hessian_nnz - other.hessian_nnz)


def structure_report(model: NlpModel) -> StructureReport:
    """Variable/constraint/nonzero accounting of a sealed model.

    Graph-backed rows contribute their symbolic patterns with duplicate
    coordinates merged; operator blocks contribute dense Jacobian blocks plus
    an identity per output variable and a dense lower-triangular Hessian over
    their inputs, counted additively (value overlap with graph entries is
    merged at solver assembly, not here).
    """
    if not model.sealed:
        model.seal()
    g = model.graph
    jac = 0
    hess_pairs: set[tuple[int, int]] = set()
    tags: dict[str, TagCount] = {}

    def tag_slot(tag):
        key = tag if tag is not None else ""
        return tags.setdefault(key, TagCount())

    def add_nl(root_pos):
        sv = sorted(g.root_nonlinear_vars(root_pos))
        for j, vj in enumerate(sv):
            for vi in sv[j:]:
                hess_pairs.add((vi, vj))

    add_nl(0)  # objective
    for row in model._graph_rows:
        nv = len(g.root_vars(row.root_pos))
        jac += nv
        add_nl(row.root_pos)
        slot = tag_slot(row.tag)
        slot.rows += 1
        slot.jacobian_nnz += nv
    hess = len(hess_pairs)
    n_rows = len(model._graph_rows)
    for blk in model._op_blocks:
        n_in = len(blk.input_vars)
        m = blk.operator.output_dim
        block_jac = m * n_in + (m if blk.output_vars is not None else 0)
        jac += block_jac
        hess += n_in * (n_in + 1) // 2
        n_rows += m
        slot = tag_slot(blk.tag)
        slot.rows += m
        slot.jacobian_nnz += block_jac
    return StructureReport(model.num_variables, n_rows, jac, hess, tags)


_TABLE1_COLUMNS = ["Parameters", "Formulation", "N. Variables",
                   "N. Constraints", "Jacobian NNZ", "Hessian NNZ"]


def structure_table_csv(entries) -> str:
    """entries: iterable of (parameters_label, formulation, StructureReport)."""
    out = io.StringIO()
    out.write(",".join(_TABLE1_COLUMNS) + "\n")
    for params, formulation, rep in entries:
        out.write(f"{params},{formulation},{rep.num_variables},"
                  f"{rep.num_constraints},{rep.jacobian_nnz},{rep.hessian_nnz}\n")
    return out.getvalue()


def structure_table_markdown(entries) -> str:
    rows = [_TABLE1_COLUMNS]
    for params, formulation, rep in entries:
        rows.append([str(params), str(formulation), str(rep.num_variables),
                     str(rep.num_constraints), str(rep.jacobian_nnz),
                     str(rep.hessian_nnz)])
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    lines = []
    for i, r in enumerate(rows):
        lines.append("| " + " | ".join(v.ljust(w) for v, w in zip(r, widths)) + " |")
        if i == 0:
            lines.append("|" + "|".join("-" * (w + 2) for w in widths) + "|")
    return "\n".join(lines) + "\n"


# -- canonical form -------------------------------------------------------------


@dataclass
class _CanonGraphRow:
    root_pos: int
    rhs: float
    slack: int  # -1 when the row was already an equality


@dataclass
class _CanonOpRows:
    block: _OpBlock
    slacks: np.ndarray | None  # per-output slack variable, or None


@dataclass
class BackMap:
    """Recovers original variable values and row activities."""

    n_orig_vars: int
    n_orig_rows: int
    row_kinds: list

    def variables(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x)[: self.n_orig_vars]


class CanonicalModel:
    """Equality-constrained model with bounds; ready for the solver.

    Rows, in order: the original model's rows (slack-augmented where they
    were inequalities), then one pin row per originally fixed variable.
    """

    def __init__(self, model: NlpModel):
        model.seal()
        self.model = model
        g = model.graph
        self.n_orig_vars = model.num_variables
        lower = np.array(model.lower, dtype=np.float64)
        upper = np.array(model.upper, dtype=np.float64)
        start = np.array(model.start, dtype=np.float64)
        names = list(model.names)

        # fixed variables become free, pinned by an equality row
        fixed = np.nonzero(lower == upper)[0]
        self._fixed_vars = fixed
        self._fixed_vals = lower[fixed].copy()
        lower = lower.copy()
        upper = upper.copy()
        lower[fixed] = -np.inf
        upper[fixed] = np.inf

        try:
            root_vals = g.evaluate(start)
        except EvaluationError:
            root_vals = None

        self._rows: list = []
        slack_lower, slack_upper, slack_start, slack_names = [], [], [], []

        def new_slack(lo, hi, row_val, label):
            idx = self.n_orig_vars + len(slack_lower)
            slack_lower.append(lo)
            slack_upper.append(hi)
            if row_val is not None and np.isfinite(row_val):
                s0 = min(max(row_val, lo), hi)
            elif np.isfinite(lo) and np.isfinite(hi):
                s0 = 0.5 * (lo + hi)
            else:
                s0 = min(max(0.0, lo), hi)
            slack_start.append(s0)
            slack_names.append(label)
            return idx

        op_row_vals: dict[int, np.ndarray] = {}
        for bi, blk in enumerate(model._op_blocks):
            if blk.output_vars is None:
                try:
                    op_row_vals[bi] = np.asarray(
                        blk.operator.evaluate(start[blk.input_vars]), dtype=np.float64)
                except Exception:
                    op_row_vals[bi] = np.full(blk.operator.output_dim, np.nan)

        consumed_blocks: set[int] = set()
        for i, row in enumerate(model._rows):
            if isinstance(row, _GraphRow):
                if row.lower == row.upper:
                    self._rows.append(_CanonGraphRow(row.root_pos, row.lower, -1))
                else:
                    rv = root_vals[row.root_pos] if root_vals is not None else None
                    s = new_slack(row.lower, row.upper, rv, f"slack[r{i}]")
                    self._rows.append(_CanonGraphRow(row.root_pos, 0.0, s))
            else:
                _, bi, j = row
                if bi in consumed_blocks:
                    continue
                consumed_blocks.add(bi)
                blk = model._op_blocks[bi]
                if blk.output_vars is not None:
                    self._rows.append(_CanonOpRows(blk, None))
                else:
                    vals = op_row_vals[bi]
                    slacks = np.array([
                        new_slack(float(blk.lower[k]), float(blk.upper[k]),
                                  float(vals[k]) if np.isfinite(vals[k]) else None,
                                  f"slack[r{blk.first_row + k}]")
                        for k in range(blk.operator.output_dim)
                    ], dtype=np.int64)
                    self._rows.append(_CanonOpRows(blk, slacks))
        for v, val in zip(fixed, self._fixed_vals):
            self._rows.append(("fix", int(v), float(val)))

        self.lower = np.concatenate([lower, np.array(slack_lower)]) \
            if slack_lower else lower
        self.upper = np.concatenate([upper, np.array(slack_upper)]) \
            if slack_upper else upper
        self.start = np.concatenate([start, np.array(slack_start)]) \
            if slack_start else start
        self.names = names + slack_names
        self.n_vars = len(self.lower)
        self._prepare()
        self.backmap = BackMap(self.n_orig_vars, model.num_rows,
                               [type(r).__name__ for r in self._rows])

    # -- assembly ------------------------------------------------------------

    def _prepare(self) -> None:
        g = self.model.graph
        jp = g.jacobian_pattern
        jrows, jcols, jsrc = [], [], []
        self.n_rows = 0
        row_of_root = {}
        self._op_specs = []
        for entry in self._rows:
            if isinstance(entry, _CanonGraphRow):
                i = self.n_rows
                row_of_root[entry.root_pos] = i
                lo, hi = g.jacobian_row_slice(entry.root_pos)
                jrows.extend([i] * (hi - lo))
                jcols.extend(jp.cols[lo:hi].tolist())
                jsrc.extend(range(lo, hi))
                if entry.slack >= 0:
                    jrows.append(i)
                    jcols.append(entry.slack)
                    jsrc.append(-1)  # constant -1.0
                self.n_rows += 1
            elif isinstance(entry, _CanonOpRows):
                blk = entry.block
                m, n_in = blk.operator.output_dim, len(blk.input_vars)
                base = self.n_rows
                slots = []
                for j in range(m):
                    slots.extend(range(len(jrows), len(jrows) + n_in))
                    jrows.extend([base + j] * n_in)
                    jcols.extend(blk.input_vars.tolist())
                    jsrc.extend([-2] * n_in)  # filled from operator jacobian
                    if blk.output_vars is not None:
                        jrows.append(base + j)
                        jcols.append(int(blk.output_vars[j]))
                        jsrc.append(-3)  # constant +1.0
                    else:
                        jrows.append(base + j)
                        jcols.append(int(entry.slacks[j]))
                        jsrc.append(-1)
                self._op_specs.append((entry, base, np.asarray(slots, dtype=np.int64)))
                self.n_rows += m
            else:
                _, v, _val = entry
                jrows.append(self.n_rows)
                jcols.append(v)
                jsrc.append(-3)
                self.n_rows += 1
        self.jac_rows = np.asarray(jrows, dtype=np.int64)
        self.jac_cols = np.asarray(jcols, dtype=np.int64)
        self._jac_src = np.asarray(jsrc, dtype=np.int64)
        self._jac_graph_mask = self._jac_src >= 0
        self._jac_graph_src = self._jac_src[self._jac_graph_mask]
        self._row_of_root = row_of_root

        # multipliers vector layout for graph.hessian_lagrangian
        self._n_graph_multipliers = g.num_roots - 1
        self._graph_mult_slot = np.array(
            [row_of_root.get(p + 1, -1) for p in range(self._n_graph_multipliers)],
            dtype=np.int64)

        hp = g.hessian_pattern
        hrows = [hp.rows]
        hcols = [hp.cols]
        self._n_graph_hess = len(hp.rows)
        self._op_hess = []
        for entry, base, _slots in self._op_specs:
            blk = entry.block
            iv = blk.input_vars
            r, c = np.tril_indices(len(iv))
            va, vb = iv[r], iv[c]
            rows = np.maximum(va, vb)
            cols = np.minimum(va, vb)
            hrows.append(rows)
            hcols.append(cols)
            self._op_hess.append((entry, base, r, c))
        self.hess_rows = np.concatenate(hrows) if hrows else np.zeros(0, np.int64)
        self.hess_cols = np.concatenate(hcols) if hcols else np.zeros(0, np.int64)

    @property
    def jacobian_nnz(self) -> int:
        return len(self.jac_rows)

    def workspace(self):
        return self.model.graph.workspace()

    def eval_fc(self, x, ws=None) -> tuple[float, np.ndarray]:
        """Objective value and constraint residuals in one pass."""
        g = self.model.graph
        x = np.asarray(x, dtype=np.float64)
        vals = g.evaluate(x[: self.n_orig_vars], ws)
        c = np.zeros(self.n_rows)
        i = 0
        for entry in self._rows:
            if isinstance(entry, _CanonGraphRow):
                c[i] = vals[entry.root_pos] - entry.rhs
                if entry.slack >= 0:
                    c[i] -= x[entry.slack]
                i += 1
            elif isinstance(entry, _CanonOpRows):
                blk = entry.block
                m = blk.operator.output_dim
                out = np.asarray(blk.operator.evaluate(x[blk.input_vars]),
                                 dtype=np.float64)
                if blk.output_vars is not None:
                    c[i:i + m] = x[blk.output_vars] - out
                else:
                    c[i:i + m] = out - x[entry.slacks]
                i += m
            else:
                _, v, val = entry
                c[i] = x[v] - val
                i += 1
        return float(vals[0]), c

    def eval_derivatives(self, x, ws=None) -> tuple[np.ndarray, np.ndarray]:
        """(dense objective gradient, Jacobian values aligned with jac_rows)."""
        g = self.model.graph
        x = np.asarray(x, dtype=np.float64)
        jp, jvals = g.jacobian(x[: self.n_orig_vars], ws)
        grad = np.zeros(self.n_vars)
        lo, hi = g.jacobian_row_slice(0)
        grad[jp.cols[lo:hi]] = jvals[lo:hi]
        out = np.empty(len(self.jac_rows))
        out[self._jac_src == -1] = -1.0
        out[self._jac_src == -3] = 1.0
        out[self._jac_graph_mask] = jvals[self._jac_graph_src]
        for entry, base, slots in self._op_specs:
            blk = entry.block
            jac = np.asarray(blk.operator.jacobian(x[blk.input_vars]),
                             dtype=np.float64)
            # operator rows are y - f(x) = 0 or f(x) - s = 0
            sign = -1.0 if blk.output_vars is not None else 1.0
            out[slots] = (sign * jac).ravel()
        return grad, out

    def eval_hessian(self, x, obj_factor: float, lam, ws=None) -> np.ndarray:
        """Lower-triangular Hessian values aligned with hess_rows/cols."""
        lam = np.asarray(lam, dtype=np.float64)
        mults = np.zeros(self._n_graph_multipliers)
        ok = self._graph_mult_slot >= 0
        mults[ok] = lam[self._graph_mult_slot[ok]]
        x = np.asarray(x, dtype=np.float64)
        _, hvals = self.model.graph.hessian_lagrangian(
            x[: self.n_orig_vars], obj_factor, mults, ws)
        parts = [hvals]
        for entry, base, r, c in self._op_hess:
            blk = entry.block
            m = blk.operator.output_dim
            w = lam[base:base + m]
            if blk.output_vars is not None:
                w = -w  # rows are y - f(x)
            if blk.operator.weighted_hessian is None:
                raise ModelError(
                    f"operator {blk.operator.name!r} provides no Hessian")
            dense = np.asarray(blk.operator.weighted_hessian(x[blk.input_vars], w),
                               dtype=np.float64)
            parts.append(dense[r, c])
        return np.concatenate(parts)

    def recover(self, x) -> np.ndarray:
        """Original model's variable values from a canonical solution."""
        return np.asarray(x)[: self.n_orig_vars].copy()

    def row_activities(self, x, ws=None) -> np.ndarray:
        """g_i(x) for the original rows of the source model."""
        _, c = self.eval_fc(x, ws)
        acts = np.zeros(self.model.num_rows)
        i = 0
        for entry in self._rows:
            if isinstance(entry, _CanonGraphRow):
                acts[i] = (x[entry.slack] + c[i] if entry.slack >= 0
                           else entry.rhs + c[i])
                i += 1
            elif isinstance(entry, _CanonOpRows):
                blk = entry.block
                m = blk.operator.output_dim
                if blk.output_vars is not None:
                    acts[i:i + m] = c[i:i + m]  # the row itself is y - f(x)
                else:
                    acts[i:i + m] = x[entry.slacks] + c[i:i + m]
                i += m
            else:
                break  # pin rows are not original rows
        return acts


def canonicalize(model) -> tuple[CanonicalModel, BackMap]:
    """Slack-augmented equality form; idempotent on canonical models."""
    if isinstance(model, CanonicalModel):
        return model, model.backmap
    canon = CanonicalModel(model)
    return canon, canon.backmap
