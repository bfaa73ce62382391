"""Feed-forward network runtime: evaluation, derivatives, training, weight IO.

Networks are stacks of affine layers followed by smooth activations (tanh,
sigmoid, or identity).  The runtime provides the three oracles an optimizer
needs from an opaque predictor: forward values, the dense Jacobian, and the
Hessian of any weighted combination of outputs.  Training is plain full- or
mini-batch Adam on mean squared error with per-feature standardization that
is folded back into the first and last layers on export, so a trained network
consumes and produces physical units.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("tanh", "sigmoid", "identity")
_ACT_CODE = {name: i for i, name in enumerate(ACTIVATIONS)}

_BINARY_MAGIC = b"MLPW"
_BINARY_THRESHOLD = 1_000_000  # parameters; larger nets default to the sidecar


class NetworkError(ValueError):
    """Malformed network structure or weight file."""


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
    return z


def _act_prime(name: str, y: np.ndarray) -> np.ndarray:
    # derivative expressed through the activation value
    if name == "tanh":
        return 1.0 - y ** 2
    if name == "sigmoid":
        return y * (1.0 - y)
    return np.ones_like(y)


def _act_second(name: str, y: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return -2.0 * y * (1.0 - y ** 2)
    if name == "sigmoid":
        return y * (1.0 - y) * (1.0 - 2.0 * y)
    return np.zeros_like(y)


def activation_range(name: str) -> tuple[float, float]:
    if name == "tanh":
        return (-1.0, 1.0)
    if name == "sigmoid":
        return (0.0, 1.0)
    return (-np.inf, np.inf)


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray   # out x in
    bias: np.ndarray     # out
    activation: str

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise NetworkError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise NetworkError("layer weight/bias shapes inconsistent")


@dataclass(frozen=True)
class MlpNetwork:
    """Immutable trained network."""

    layers: tuple[Layer, ...]

    def __post_init__(self):
        if not self.layers:
            raise NetworkError("network needs at least one layer")
        for prev, cur in zip(self.layers, self.layers[1:]):
            if cur.weight.shape[1] != prev.weight.shape[0]:
                raise NetworkError("layer dimensions do not chain")
        for lay in self.layers:
            if not (np.isfinite(lay.weight).all() and np.isfinite(lay.bias).all()):
                raise NetworkError("non-finite weight encountered")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def parameter_count(self) -> int:
        return sum(w.weight.size + w.bias.size for w in self.layers)

    @property
    def widths(self) -> list[int]:
        return [self.input_dim] + [lay.weight.shape[0] for lay in self.layers]

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.input_dim,):
            raise NetworkError(f"input shape {x.shape}, expected ({self.input_dim},)")
        y = x
        for lay in self.layers:
            y = _act(lay.activation, lay.weight @ y + lay.bias)
        return y

    def forward_batch(self, x: np.ndarray) -> np.ndarray:
        """Row-per-sample forward pass."""
        y = np.asarray(x, dtype=np.float64)
        for lay in self.layers:
            y = _act(lay.activation, y @ lay.weight.T + lay.bias)
        return y

    def jacobian(self, x) -> np.ndarray:
        """Dense Jacobian, output_dim x input_dim, by reverse accumulation."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.input_dim,):
            raise NetworkError(f"input shape {x.shape}, expected ({self.input_dim},)")
        y = x
        outs = []
        for lay in self.layers:
            y = _act(lay.activation, lay.weight @ y + lay.bias)
            outs.append(y)
        jac = None
        for lay, out in zip(reversed(self.layers), reversed(outs)):
            local = _act_prime(lay.activation, out)[:, None] * lay.weight
            jac = local if jac is None else jac @ local
        return jac

    def weighted_hessian(self, x, w) -> np.ndarray:
        """Hessian of w . NN(x), dense symmetric input_dim x input_dim.

        One forward pass carrying the identity tangent block, then a reverse
        pass carrying adjoints and their tangents.
        """
        x = np.asarray(x, dtype=np.float64)
        w = np.asarray(w, dtype=np.float64)
        if x.shape != (self.input_dim,):
            raise NetworkError(f"input shape {x.shape}, expected ({self.input_dim},)")
        if w.shape != (self.output_dim,):
            raise NetworkError(f"weight shape {w.shape}, expected ({self.output_dim},)")
        n0 = self.input_dim
        y = x
        ydot = np.eye(n0)
        outs, dots = [], []
        for lay in self.layers:
            zdot = lay.weight @ ydot
            y = _act(lay.activation, lay.weight @ y + lay.bias)
            ydot = _act_prime(lay.activation, y)[:, None] * zdot
            outs.append(y)
            dots.append(zdot)
        # adjoint on z_l and its tangent, walked backwards
        lay = self.layers[-1]
        sp = _act_prime(lay.activation, outs[-1])
        adj = w * sp
        adj_dot = (w * _act_second(lay.activation, outs[-1]))[:, None] * dots[-1]
        for idx in range(len(self.layers) - 2, -1, -1):
            lay = self.layers[idx]
            up = self.layers[idx + 1].weight.T @ adj
            up_dot = self.layers[idx + 1].weight.T @ adj_dot
            sp = _act_prime(lay.activation, outs[idx])
            s2 = _act_second(lay.activation, outs[idx])
            adj_dot = sp[:, None] * up_dot + (s2 * up)[:, None] * dots[idx]
            adj = sp * up
        hess = self.layers[0].weight.T @ adj_dot
        return 0.5 * (hess + hess.T)


def make_network(widths, activations=None, seed: int = 0) -> MlpNetwork:
    """Random network with uniform +-sqrt(6/(in+out)) weights per layer."""
    widths = [int(w) for w in widths]
    if len(widths) < 2:
        raise NetworkError("need input and output widths")
    if activations is None:
        activations = ["tanh"] * (len(widths) - 2) + ["identity"]
    if len(activations) != len(widths) - 1:
        raise NetworkError("one activation per layer required")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(widths, widths[1:], activations):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append(Layer(w, np.zeros(fan_out), act))
    return MlpNetwork(tuple(layers))


def partial_apply(net: MlpNetwork, fixed_indices, fixed_values) -> MlpNetwork:
    """Fold constant inputs into the first layer, shrinking the input dim."""
    fixed_indices = np.asarray(fixed_indices, dtype=np.int64)
    fixed_values = np.asarray(fixed_values, dtype=np.float64)
    if fixed_indices.shape != fixed_values.shape:
        raise NetworkError("fixed indices/values length mismatch")
    keep = np.setdiff1d(np.arange(net.input_dim), fixed_indices)
    first = net.layers[0]
    new_w = first.weight[:, keep]
    new_b = first.bias + first.weight[:, fixed_indices] @ fixed_values
    return MlpNetwork((Layer(new_w, new_b, first.activation),) + net.layers[1:])


def widen(net: MlpNetwork, hidden_widths) -> MlpNetwork:
    """Zero-pad hidden layers to the given widths; the function is unchanged.

    Padded tanh units receive zero input, output zero, and feed zero weights
    downstream, so the widened network computes exactly the same map while
    costing the full dense arithmetic of its nominal size.  Used to scale
    benchmark networks without retraining.
    """
    hidden_widths = [int(h) for h in hidden_widths]
    old_hidden = net.widths[1:-1]
    if len(hidden_widths) != len(old_hidden):
        raise NetworkError("widen preserves depth; pass one width per hidden layer")
    if any(h < o for h, o in zip(hidden_widths, old_hidden)):
        raise NetworkError("hidden widths may only grow")
    sizes = [net.input_dim] + hidden_widths + [net.output_dim]
    layers = []
    for k, lay in enumerate(net.layers):
        rows, cols = sizes[k + 1], sizes[k]
        w = np.zeros((rows, cols))
        b = np.zeros(rows)
        r, c = lay.weight.shape
        w[:r, :c] = lay.weight
        b[:r] = lay.bias
        layers.append(Layer(w, b, lay.activation))
    return MlpNetwork(tuple(layers))


# -- training ----------------------------------------------------------------


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 0          # 0: full batch
    max_epochs: int = 20_000
    loss_threshold: float = 0.01
    patience: int = 50           # consecutive epochs below threshold to stop
    seed: int = 0

    def __post_init__(self):
        if self.loss_threshold <= 0:
            raise ValueError("loss threshold must be positive")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")


@dataclass
class TrainResult:
    network: MlpNetwork          # standardization folded in, physical units
    loss_history: np.ndarray     # standardized full-dataset MSE per epoch
    converged: bool
    epochs: int
    input_mean: np.ndarray = field(repr=False, default=None)
    input_scale: np.ndarray = field(repr=False, default=None)


class DivergedError(RuntimeError):
    """Training loss became non-finite."""


def _standardize(arr: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = arr.mean(axis=0)
    scale = arr.std(axis=0)
    scale = np.where(scale < 1e-12, 1.0, scale)
    return (arr - mean) / scale, mean, scale


def train_adam(inputs, targets, widths, cfg: TrainConfig) -> TrainResult:
    """Adam on standardized MSE until the loss stays under the threshold.

    ``widths`` are hidden-layer sizes; input/output sizes come from the data.
    Stops once the full-dataset standardized MSE has been below
    ``cfg.loss_threshold`` for ``cfg.patience`` consecutive epochs.
    """
    X = np.asarray(inputs, dtype=np.float64)
    Y = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or len(X) != len(Y) or len(X) == 0:
        raise NetworkError("inputs/targets must be nonempty matching 2-d arrays")
    n_samples = len(X)
    Xs, x_mean, x_scale = _standardize(X)
    Ys, y_mean, y_scale = _standardize(Y)

    sizes = [X.shape[1]] + [int(w) for w in widths] + [Y.shape[1]]
    acts = ["tanh"] * (len(sizes) - 2) + ["identity"]
    rng = np.random.default_rng(cfg.seed)
    Ws, bs = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        Ws.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        bs.append(np.zeros(fan_out))

    mW = [np.zeros_like(w) for w in Ws]
    vW = [np.zeros_like(w) for w in Ws]
    mb = [np.zeros_like(b) for b in bs]
    vb = [np.zeros_like(b) for b in bs]

    def forward_all(xb):
        ys = [xb]
        for W, b, act in zip(Ws, bs, acts):
            ys.append(_act(act, ys[-1] @ W.T + b))
        return ys

    def full_loss():
        pred = forward_all(Xs)[-1]
        return float(np.mean((pred - Ys) ** 2))

    batch = cfg.batch_size if 0 < cfg.batch_size < n_samples else n_samples
    t = 0
    history = []
    streak = 0
    converged = False
    epochs_run = 0
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n_samples) if batch < n_samples \
            else np.arange(n_samples)
        for lo in range(0, n_samples, batch):
            sel = order[lo:lo + batch]
            ys = forward_all(Xs[sel])
            # MSE normalized over every sample and output component
            delta = 2.0 * (ys[-1] - Ys[sel]) / (len(sel) * Y.shape[1])
            t += 1
            for li in range(len(Ws) - 1, -1, -1):
                delta = delta * _act_prime(acts[li], ys[li + 1])
                gW = delta.T @ ys[li]
                gb = delta.sum(axis=0)
                if li > 0:
                    delta = delta @ Ws[li]
                for g, W, m, v in ((gW, Ws[li], mW[li], vW[li]),
                                   (gb, bs[li], mb[li], vb[li])):
                    m *= cfg.beta1
                    m += (1 - cfg.beta1) * g
                    v *= cfg.beta2
                    v += (1 - cfg.beta2) * g * g
                    mhat = m / (1 - cfg.beta1 ** t)
                    vhat = v / (1 - cfg.beta2 ** t)
                    W -= cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)
        loss = full_loss()
        if not np.isfinite(loss):
            raise DivergedError(f"training loss non-finite at epoch {epoch}")
        history.append(loss)
        epochs_run = epoch + 1
        streak = streak + 1 if loss < cfg.loss_threshold else 0
        if streak >= cfg.patience:
            converged = True
            break

    layers = [Layer(W.copy(), b.copy(), act) for W, b, act in zip(Ws, bs, acts)]
    # fold input standardization into the first layer ...
    W0, b0 = layers[0].weight, layers[0].bias
    layers[0] = Layer(W0 / x_scale, b0 - W0 @ (x_mean / x_scale),
                      layers[0].activation)
    # ... and output de-standardization into the identity final layer
    WL, bL = layers[-1].weight, layers[-1].bias
    layers[-1] = Layer(WL * y_scale[:, None], bL * y_scale + y_mean, "identity")
    return TrainResult(MlpNetwork(tuple(layers)), np.asarray(history),
                       converged, epochs_run, x_mean, x_scale)


# -- persistence --------------------------------------------------------------


def save_weights(net: MlpNetwork, path) -> None:
    """JSON by default; the binary sidecar for large nets or .bin paths."""
    path = str(path)
    if path.endswith(".bin") or (net.parameter_count > _BINARY_THRESHOLD
                                 and not path.endswith(".json")):
        _save_binary(net, path)
    else:
        _save_json(net, path)


def _save_json(net: MlpNetwork, path: str) -> None:
    doc = {
        "version": 1,
        "activations": [lay.activation for lay in net.layers],
        "layers": [
            {
                "rows": lay.weight.shape[0],
                "cols": lay.weight.shape[1],
                "weight_row_major": lay.weight.ravel().tolist(),
                "bias": lay.bias.tolist(),
            }
            for lay in net.layers
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def _save_binary(net: MlpNetwork, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(_BINARY_MAGIC)
        fh.write(struct.pack("<II", 1, len(net.layers)))
        for lay in net.layers:
            rows, cols = lay.weight.shape
            fh.write(struct.pack("<IIB", rows, cols, _ACT_CODE[lay.activation]))
            fh.write(lay.weight.astype("<f8").tobytes())
            fh.write(lay.bias.astype("<f8").tobytes())


def load_weights(path) -> MlpNetwork:
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == _BINARY_MAGIC:
        return _load_binary(path)
    return _load_json(path)


def _load_json(path) -> MlpNetwork:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise NetworkError(f"not a weight file: {exc}") from exc
    if doc.get("version") != 1:
        raise NetworkError(f"unsupported weight file version {doc.get('version')}")
    acts = doc["activations"]
    layers = []
    for act, spec in zip(acts, doc["layers"]):
        rows, cols = int(spec["rows"]), int(spec["cols"])
        w = np.asarray(spec["weight_row_major"], dtype=np.float64)
        if w.size != rows * cols:
            raise NetworkError("weight count does not match declared shape")
        b = np.asarray(spec["bias"], dtype=np.float64)
        if b.size != rows:
            raise NetworkError("bias count does not match declared shape")
        layers.append(Layer(w.reshape(rows, cols), b, act))
    if len(layers) != len(acts) or len(layers) != len(doc["layers"]):
        raise NetworkError("activation/layer count mismatch")
    return MlpNetwork(tuple(layers))


def _load_binary(path) -> MlpNetwork:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _BINARY_MAGIC:
        raise NetworkError("bad magic in binary weight file")
    version, n_layers = struct.unpack_from("<II", data, 4)
    if version != 1:
        raise NetworkError(f"unsupported weight file version {version}")
    off = 12
    layers = []
    for _ in range(n_layers):
        rows, cols, code = struct.unpack_from("<IIB", data, off)
        off += 9
        if code >= len(ACTIVATIONS):
            raise NetworkError(f"unknown activation code {code}")
        w = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=off)
        off += rows * cols * 8
        b = np.frombuffer(data, dtype="<f8", count=rows, offset=off)
        off += rows * 8
        layers.append(Layer(w.reshape(rows, cols).copy(), b.copy(),
                            ACTIVATIONS[code]))
    return MlpNetwork(tuple(layers))
