"""Encode a trained network into an NLP model, three ways.

Full-space introduces explicit pre- and post-activation variables per layer
with one affine and one scalar activation equality row per unit.  Reduced
space scalarizes the whole network into one expression tree per output,
adding no variables; hidden-layer output nodes are shared across the output
expressions but each affine transform is expanded as a sum of scalar
products.  Gray-box hides the network behind callback oracles registered as
an external operator, adding one output variable and one equality row per
output.

Every embedder returns a handle with the formulation kind, the output
representation, and the structural deltas the embedding implies; the deltas
are exact against ``structure_report`` differences (for reduced space, under
the convention that the caller attaches one constraint row per output).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mlp import MlpNetwork, activation_range
from .nlp import ExternalOperator, ModelError, NlpModel


@dataclass(frozen=True)
class StructuralDelta:
    variables: int
    constraints: int
    jacobian_nnz: int
    hessian_nnz: int

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.variables, self.constraints,
                self.jacobian_nnz, self.hessian_nnz)


@dataclass
class EmbeddingHandle:
    formulation: str                    # "full" | "reduced" | "graybox"
    input_vars: np.ndarray
    output_vars: np.ndarray | None      # full space and gray box
    output_nodes: np.ndarray | None     # reduced space expression roots
    aux_var_range: tuple[int, int]
    aux_row_range: tuple[int, int]
    predicted: StructuralDelta

    @property
    def output_dim(self) -> int:
        rep = self.output_vars if self.output_vars is not None else self.output_nodes
        return len(rep)


def _check(model: NlpModel, net: MlpNetwork, x_vars) -> np.ndarray:
    if model.sealed:
        raise ModelError("cannot embed into a sealed model")
    x_vars = np.asarray(x_vars, dtype=np.int64)
    if len(x_vars) != net.input_dim:
        raise ModelError(
            f"network expects {net.input_dim} inputs, got {len(x_vars)} variables")
    if np.any(x_vars < 0) or np.any(x_vars >= model.num_variables):
        raise ModelError("embedding input variable out of range")
    return x_vars


def _balanced_sum(g, nodes: list[int]) -> int:
    while len(nodes) > 1:
        nodes = [g.add(nodes[i], nodes[i + 1]) if i + 1 < len(nodes) else nodes[i]
                 for i in range(0, len(nodes), 2)]
    return nodes[0]


def _apply_activation(g, node: int, activation: str) -> int:
    if activation == "tanh":
        return g.tanh(node)
    if activation == "sigmoid":
        return g.sigmoid(node)
    return node


def embed_full_space(model: NlpModel, net: MlpNetwork, x_vars,
                     tag: str = "nn-layer") -> EmbeddingHandle:
    """Per layer: W y_prev - z = -b rows plus y_i - act(z_i) = 0 rows."""
    x_vars = _check(model, net, x_vars)
    g = model.graph
    var_lo = model.num_variables
    row_lo = model.num_rows
    prev_vars = x_vars
    prev_start = np.array([model.start[v] for v in x_vars])
    jac = 0
    hess = 0
    for li, lay in enumerate(net.layers):
        W, b, act = lay.weight, lay.bias, lay.activation
        n_out = W.shape[0]
        z0 = W @ prev_start + b
        y0 = {"tanh": np.tanh, "sigmoid": lambda z: 1 / (1 + np.exp(-z))}.get(
            act, lambda z: z)(z0)
        z_vars = [model.add_variable(start=z0[i], name=f"nn.z[{li},{i}]")
                  for i in range(n_out)]
        lo, hi = activation_range(act)
        y_vars = [model.add_variable(lo, hi, start=y0[i], name=f"nn.y[{li},{i}]")
                  for i in range(n_out)]
        for i in range(n_out):
            terms = [g.mul(g.constant(W[i, j]), g.var(int(v)))
                     for j, v in enumerate(prev_vars)]
            terms.append(g.neg(g.var(z_vars[i])))
            model.add_constraint(_balanced_sum(g, terms), -b[i], -b[i], tag=tag)
            act_node = _apply_activation(g, g.var(z_vars[i]), act)
            model.add_constraint(g.sub(g.var(y_vars[i]), act_node), 0.0, 0.0,
                                 tag=tag)
        jac += n_out * (len(prev_vars) + 1) + 2 * n_out
        if act != "identity":
            hess += n_out
        prev_vars = np.asarray(y_vars, dtype=np.int64)
        prev_start = y0
    n_aux = model.num_variables - var_lo
    n_rows = model.num_rows - row_lo
    return EmbeddingHandle(
        "full", x_vars, prev_vars, None,
        (var_lo, model.num_variables), (row_lo, model.num_rows),
        StructuralDelta(n_aux, n_rows, jac, hess))


def _weight_reachability(net: MlpNetwork):
    """Which inputs each output depends on, split linear vs nonlinear."""
    n0 = net.input_dim
    lin = np.eye(n0, dtype=bool)
    nl = np.zeros((n0, n0), dtype=bool)
    for lay in net.layers:
        dep = lay.weight != 0.0
        lin2 = dep @ lin
        nl2 = dep @ nl
        if lay.activation != "identity":
            nl2 |= lin2
            lin2 = np.zeros_like(lin2)
        lin, nl = lin2, nl2
    return lin, nl


def embed_reduced_space(model: NlpModel, net: MlpNetwork, x_vars,
                        tag: str = "nn-layer") -> EmbeddingHandle:
    """One scalarized expression root per output; no variables added.

    The handle's predicted deltas assume the caller attaches one constraint
    row per output root, the usage every downstream consumer follows.
    """
    x_vars = _check(model, net, x_vars)
    g = model.graph

    # existing Hessian pairs, measured before the network nodes are built
    existing: set[tuple[int, int]] = set()
    probe_nodes = [model._objective_node if model._objective_node is not None
                   else None]
    probe_nodes = [n for n in probe_nodes if n is not None]
    probe_nodes += [row.node for row in model._graph_rows]
    for _, nlset in g.node_varsets(probe_nodes):
        sv = sorted(nlset)
        for j, vj in enumerate(sv):
            for vi in sv[j:]:
                existing.add((vi, vj))

    prev = [g.var(int(v)) for v in x_vars]
    for li, lay in enumerate(net.layers):
        W, b, act = lay.weight, lay.bias, lay.activation
        outs = []
        for i in range(W.shape[0]):
            terms = [g.mul(g.constant(W[i, j]), prev[j])
                     for j in range(W.shape[1])]
            affine = g.add(_balanced_sum(g, terms), g.constant(b[i]))
            outs.append(_apply_activation(g, affine, act))
        prev = outs
    for node in prev:
        model.register_expression(node)

    lin, nl = _weight_reachability(net)
    jac = 0
    new_pairs: set[tuple[int, int]] = set()
    for k in range(net.output_dim):
        deps = x_vars[lin[k] | nl[k]]
        jac += len(deps)
        nlv = np.sort(x_vars[nl[k]])
        for j, vj in enumerate(nlv):
            for vi in nlv[j:]:
                new_pairs.add((int(vi), int(vj)))
    hess = len(new_pairs - existing)
    return EmbeddingHandle(
        "reduced", x_vars, None, np.asarray(prev, dtype=np.int64),
        (model.num_variables, model.num_variables),
        (model.num_rows, model.num_rows),
        StructuralDelta(0, net.output_dim, jac, hess))


def network_operator(net: MlpNetwork, name: str = "nn") -> ExternalOperator:
    """Callback oracles over a network's native evaluation routines."""
    return ExternalOperator(
        input_dim=net.input_dim,
        output_dim=net.output_dim,
        evaluate=net.forward,
        jacobian=net.jacobian,
        weighted_hessian=net.weighted_hessian,
        has_hessian=True,
        name=name,
    )


def embed_gray_box(model: NlpModel, net: MlpNetwork, x_vars,
                   tag: str = "nn-layer") -> EmbeddingHandle:
    """Output variables y plus operator-backed rows y - NN(x) = 0."""
    x_vars = _check(model, net, x_vars)
    var_lo = model.num_variables
    row_lo = model.num_rows
    x0 = np.array([model.start[v] for v in x_vars])
    y0 = net.forward(x0)
    lo, hi = activation_range(net.layers[-1].activation)
    y_vars = [model.add_variable(lo, hi, start=y0[j], name=f"nn.out[{j}]")
              for j in range(net.output_dim)]
    op = network_operator(net)
    model.add_operator_constraint(op, x_vars, y_vars, tag=tag)
    n0, nL = net.input_dim, net.output_dim
    return EmbeddingHandle(
        "graybox", x_vars, np.asarray(y_vars, dtype=np.int64), None,
        (var_lo, model.num_variables), (row_lo, model.num_rows),
        StructuralDelta(nL, nL, nL * (n0 + 1), n0 * (n0 + 1) // 2))
