"""Small dense networks with hand-written backprop, Adam, and checkpoints.

All math is float64. Forward/backward are pure functions of (params, input);
initialization is fully determined by an integer seed. Checkpoints use the
ORLM framed binary format (magic "ORLM", u16 LE version, then per-array
frames: u16 name length, utf-8 name, u8 ndims, u32 LE dims, f64 LE data) and
round-trip bit-exactly.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .backend import kernels
from .errors import CheckpointError, InvalidInputError
from .rng import Xoshiro256

ACTIVATIONS = ("tanh", "relu")
OUTPUT_ACTIVATIONS = ("none", "tanh")

ORLM_MAGIC = b"ORLM"
ORLM_VERSION = 1


class NetParams:
    """Ordered name -> float64 array collection.

    Order is insertion order and is what the checkpoint format serializes, so
    it is stable across save/load. Arrays are C-contiguous float64.
    """

    __slots__ = ("_entries",)

    def __init__(self, entries=()):
        self._entries: dict[str, np.ndarray] = {}
        for name, value in dict(entries).items() if isinstance(entries, dict) else entries:
            self[name] = value

    def __setitem__(self, name: str, value) -> None:
        arr = np.ascontiguousarray(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError(f"non-finite values in parameter {name!r}")
        self._entries[str(name)] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def copy(self) -> "NetParams":
        return NetParams([(k, v.copy()) for k, v in self.items()])

    def zeros_like(self) -> "NetParams":
        return NetParams([(k, np.zeros_like(v)) for k, v in self.items()])

    def total_size(self) -> int:
        return sum(v.size for v in self._entries.values())

    def allclose(self, other: "NetParams", **kw) -> bool:
        return self.names() == other.names() and all(
            np.allclose(self[k], other[k], **kw) for k in self
        )

    def mirrors(self, other: "NetParams") -> bool:
        """Same names, same order, same shapes."""
        return self.names() == other.names() and all(
            self[k].shape == other[k].shape for k in self
        )


def save_params(params: NetParams, path) -> None:
    """Write an ORLM checkpoint (bit-exact round trip with load_params)."""
    chunks = [ORLM_MAGIC, struct.pack("<H", ORLM_VERSION)]
    for name, arr in params.items():
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise InvalidInputError(f"parameter name too long: {name!r}")
        if arr.ndim > 0xFF:
            raise InvalidInputError(f"too many dimensions for {name!r}")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype("<f8", copy=False).tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_params(path) -> NetParams:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != ORLM_MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}, expected ORLM")
    if len(data) < 6:
        raise CheckpointError(f"{path}: truncated header")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != ORLM_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    entries = []
    pos = 6
    while pos < len(data):
        try:
            (name_len,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (ndims,) = struct.unpack_from("<B", data, pos)
            pos += 1
            dims = struct.unpack_from(f"<{ndims}I", data, pos)
            pos += 4 * ndims
            count = int(np.prod(dims, dtype=np.int64)) if ndims else 1
            nbytes = 8 * count
            if pos + nbytes > len(data):
                raise CheckpointError(f"{path}: truncated data for {name!r} at offset {pos}")
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(dims)
            pos += nbytes
        except (struct.error, UnicodeDecodeError) as exc:
            raise CheckpointError(f"{path}: malformed frame at offset {pos}: {exc}") from exc
        entries.append((name, arr.copy()))
    return NetParams(entries)


def merge_params(groups: dict[str, NetParams]) -> NetParams:
    """Join several parameter sets into one, prefixing names with 'group/'."""
    merged = NetParams()
    for prefix, params in groups.items():
        for name, arr in params.items():
            merged[f"{prefix}/{name}"] = arr
    return merged


def split_params(params: NetParams, prefix: str) -> NetParams:
    out = NetParams()
    lead = f"{prefix}/"
    for name, arr in params.items():
        if name.startswith(lead):
            out[name[len(lead) :]] = arr
    return out


@dataclass
class Mlp:
    """Feed-forward net: sizes [d0, ..., dL], hidden activation, output head.

    Parameters live in ``params`` under names w0/b0, w1/b1, ...; extra entries
    (e.g. a policy's log_std) are tolerated and ignored by forward/backward.
    """

    layer_sizes: tuple
    activation: str = "tanh"
    output_activation: str = "none"
    params: NetParams = field(default_factory=NetParams)

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 2:
            raise InvalidInputError("layer_sizes needs at least input and output")
        if any(s <= 0 for s in self.layer_sizes):
            raise InvalidInputError(f"non-positive layer size in {self.layer_sizes}")
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"unknown activation {self.activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise InvalidInputError(f"unknown output activation {self.output_activation!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]


def init_mlp(layer_sizes, activation="tanh", output_activation="none", seed=0) -> Mlp:
    """Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases; the
    draw order is fixed (w0, w1, ...) so a seed pins every bit."""
    net = Mlp(tuple(layer_sizes), activation, output_activation)
    rng = Xoshiro256(seed)
    for i in range(net.n_layers):
        fan_in, fan_out = net.layer_sizes[i], net.layer_sizes[i + 1]
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        w = (rng.fill_uniform(fan_out * fan_in) * 2.0 - 1.0) * limit
        net.params[f"w{i}"] = w.reshape(fan_out, fan_in)
        net.params[f"b{i}"] = np.zeros(fan_out)
    return net


def _as_batch(x, dim: int, what: str):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise InvalidInputError(f"{what} has shape {np.shape(x)}, expected (..., {dim})")
    return arr, single


def _forward_cached(net: Mlp, x2d: np.ndarray) -> list[np.ndarray]:
    """Per-layer post-activation values, acts[0] = input, acts[-1] = output."""
    k = kernels
    act = k.tanh_forward if net.activation == "tanh" else k.relu_forward
    acts = [x2d]
    a = x2d
    last = net.n_layers - 1
    for i in range(net.n_layers):
        z = k.linear_forward(a, net.params[f"w{i}"], net.params[f"b{i}"])
        if i < last:
            a = act(z)
        elif net.output_activation == "tanh":
            a = k.tanh_forward(z)
        else:
            a = z
        acts.append(a)
    return acts


def _backward_from_acts(net: Mlp, acts: list[np.ndarray], dy2d: np.ndarray):
    """Backprop through cached activations; returns (param grads, input grad).

    Both activations here are invertible from their outputs (tanh via
    1 - y^2, relu via the sign of y), so post-activation caches suffice.
    """
    k = kernels
    act_bwd = k.tanh_backward if net.activation == "tanh" else k.relu_backward
    grads: dict[str, np.ndarray] = {}
    d = dy2d
    last = net.n_layers - 1
    for i in range(net.n_layers - 1, -1, -1):
        if i == last:
            if net.output_activation == "tanh":
                d = k.tanh_backward(acts[i + 1], d)
        else:
            d = act_bwd(acts[i + 1], d)
        dw, db, d = k.linear_backward(acts[i], net.params[f"w{i}"], d)
        grads[f"w{i}"] = dw
        grads[f"b{i}"] = db
    ordered = [(n, grads[n]) for n in net.params.names() if n in grads]
    return NetParams(ordered), d


def mlp_forward(net: Mlp, x) -> np.ndarray:
    """Evaluate the net on a single input (1-D) or a batch (2-D)."""
    x2d, single = _as_batch(x, net.in_dim, "input")
    y = _forward_cached(net, x2d)[-1]
    return y[0] if single else y


def mlp_backward(net: Mlp, x, output_grad):
    """Exact gradients of sum(output * output_grad) w.r.t. parameters and input.

    output_grad must match the forward output's shape; batched inputs give
    parameter gradients summed over the batch.
    """
    x2d, single = _as_batch(x, net.in_dim, "input")
    dy2d, dsingle = _as_batch(output_grad, net.out_dim, "output_grad")
    if single != dsingle or dy2d.shape[0] != x2d.shape[0]:
        raise InvalidInputError(
            f"output_grad shape {np.shape(output_grad)} does not match input shape {np.shape(x)}"
        )
    acts = _forward_cached(net, x2d)
    grads, dx = _backward_from_acts(net, acts, dy2d)
    return grads, (dx[0] if single else dx)


@dataclass
class AdamState:
    """Adam accumulator; moment arrays mirror the tracked NetParams exactly."""

    first_moment: NetParams
    second_moment: NetParams
    step_count: int = 0
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def initial(cls, params: NetParams, learning_rate=3e-4, beta1=0.9, beta2=0.999, epsilon=1e-8):
        return cls(params.zeros_like(), params.zeros_like(), 0, learning_rate, beta1, beta2, epsilon)


def adam_step(params: NetParams, grads: NetParams, state: AdamState):
    """One bias-corrected Adam update; returns (new params, new state)."""
    if not grads.mirrors(params):
        raise InvalidInputError("gradient names/shapes do not mirror the parameters")
    if not state.first_moment.mirrors(params):
        raise InvalidInputError("Adam state does not mirror the parameters")
    new_params = params.copy()
    m1 = state.first_moment.copy()
    m2 = state.second_moment.copy()
    t = state.step_count + 1
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name in params:
        kernels.adam_update(
            new_params[name].reshape(-1),
            grads[name].reshape(-1),
            m1[name].reshape(-1),
            m2[name].reshape(-1),
            state.learning_rate,
            state.beta1,
            state.beta2,
            state.epsilon,
            c1,
            c2,
        )
    return new_params, replace(state, first_moment=m1, second_moment=m2, step_count=t)


class AdamOptimizer:
    """Stateful convenience wrapper around the functional adam_step."""

    def __init__(self, params: NetParams, learning_rate=3e-4, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.state = AdamState.initial(params, learning_rate, beta1, beta2, epsilon)

    def step(self, params: NetParams, grads: NetParams) -> NetParams:
        new_params, self.state = adam_step(params, grads, self.state)
        return new_params


def grad_check(net: Mlp, x, tolerance: float = 1e-4, step: float = 1e-5) -> float:
    """Max relative error between mlp_backward and central finite differences.

    Covers every parameter. The loss is sum(forward(x)); relative error uses a
    unit floor, |a - n| / max(1, |a|, |n|). The check only reports; callers
    compare against ``tolerance`` themselves (it is validated here so a
    nonsensical threshold fails fast).

    Perturbations of one layer's weights only change that layer's
    pre-activation by a rank-one term, so all of a layer's finite differences
    are evaluated as one batched forward through the remaining layers instead
    of two full forwards per parameter.
    """
    if tolerance <= 0:
        raise InvalidInputError("tolerance must be positive")
    if step <= 0:
        raise InvalidInputError("step must be positive")
    x1d = np.ascontiguousarray(x, dtype=np.float64)
    if x1d.ndim != 1 or x1d.size != net.in_dim:
        raise InvalidInputError(f"input has shape {np.shape(x)}, expected ({net.in_dim},)")
    g = np.ones(net.out_dim)
    analytic, _ = mlp_backward(net, x1d, g)
    acts = _forward_cached(net, x1d[None, :])
    k = kernels
    act = k.tanh_forward if net.activation == "tanh" else k.relu_forward
    last = net.n_layers - 1

    def tail_loss(z_batch: np.ndarray, layer: int) -> np.ndarray:
        """Loss for a batch of perturbed layer pre-activations."""
        if layer < last:
            a = act(z_batch)
        elif net.output_activation == "tanh":
            a = k.tanh_forward(z_batch)
        else:
            a = z_batch
        for i in range(layer + 1, net.n_layers):
            z = k.linear_forward(a, net.params[f"w{i}"], net.params[f"b{i}"])
            if i < last:
                a = act(z)
            elif net.output_activation == "tanh":
                a = k.tanh_forward(z)
            else:
                a = z
        return a @ g

    max_err = 0.0
    for i in range(net.n_layers):
        a_in = acts[i][0]
        z = k.linear_forward(a_in[None, :], net.params[f"w{i}"], net.params[f"b{i}"])[0]
        d_out, d_in = net.params[f"w{i}"].shape
        # weight (r, c) perturbation shifts z[r] by +-step * a_in[c]
        n_w = d_out * d_in
        rows = np.repeat(np.arange(d_out), d_in)
        cols = np.tile(np.arange(d_in), d_out)
        deltas = step * a_in[cols]
        z_plus = np.tile(z, (n_w, 1))
        z_minus = np.tile(z, (n_w, 1))
        z_plus[np.arange(n_w), rows] += deltas
        z_minus[np.arange(n_w), rows] -= deltas
        numeric_w = (tail_loss(z_plus, i) - tail_loss(z_minus, i)) / (2.0 * step)
        # bias r perturbation shifts z[r] by +-step
        z_plus = np.tile(z, (d_out, 1))
        z_minus = np.tile(z, (d_out, 1))
        z_plus[np.arange(d_out), np.arange(d_out)] += step
        z_minus[np.arange(d_out), np.arange(d_out)] -= step
        numeric_b = (tail_loss(z_plus, i) - tail_loss(z_minus, i)) / (2.0 * step)
        for name, numeric in ((f"w{i}", numeric_w), (f"b{i}", numeric_b)):
            a = analytic[name].reshape(-1)
            err = np.abs(a - numeric) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(numeric)))
            max_err = max(max_err, float(err.max()))
    return max_err
