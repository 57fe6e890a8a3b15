"""Module for the numpy actor/critic networks.

Layers hold no parameters: a forward pass reads a :class:`NetworkParams` mapping and returns the
output together with a :class:`Tape`, and the backward pass turns the tape and an upstream
gradient into exact parameter and input gradients. Everything runs in float64.
"""

import json
import math
import os
import struct
import numpy as np
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .common import check_file_path

CHECKPOINT_MAGIC = b"SKTWNET\x00"
CHECKPOINT_VERSION = 1


class NetworkParams(OrderedDict):
    """Ordered parameter arrays keyed ``<layer>.<name>``, with a version bumped on every update."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.version = 0

    def copy(self) -> "NetworkParams":
        """Deep copy (used for target networks)."""
        other = NetworkParams((k, np.array(v, dtype=np.float64, copy=True)) for k, v in self.items())
        other.version = self.version
        return other

    def bump(self):
        self.version += 1

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams((k, np.zeros_like(v)) for k, v in self.items())

    @property
    def size(self) -> int:
        """Total number of scalars."""
        return int(sum(v.size for v in self.values()))


@dataclass
class Tape:
    """Intermediate values of one forward pass."""

    params_id: int
    version: int
    caches: List = field(default_factory=list)
    meta: Dict = field(default_factory=dict)


def _check_tape(params: NetworkParams, tape: Tape):
    if tape.params_id != id(params) or tape.version != getattr(params, "version", 0):
        raise RuntimeError("Stale tape: the parameters changed after the forward pass.")


def _he_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / max(fan_in, 1))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    """Base layer: stateless, parameters live in a :class:`NetworkParams`."""

    def __init__(self, name: str):
        self.name = name

    def key(self, param: str) -> str:
        return f"{self.name}.{param}"

    def init(self, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        return {}

    def forward(self, params: Mapping, x: np.ndarray):
        raise NotImplementedError

    def backward(self, params: Mapping, cache, dy: np.ndarray, grads: Dict) -> np.ndarray:
        raise NotImplementedError


class Dense(Layer):
    """Affine map ``x @ W + b`` on the last axis."""

    def __init__(self, name: str, n_in: int, n_out: int, init_scale: Optional[float] = None):
        super().__init__(name)
        self.n_in, self.n_out = n_in, n_out
        self.init_scale = init_scale

    def init(self, rng):
        if self.init_scale is None:
            w = _he_uniform(rng, (self.n_in, self.n_out), self.n_in)
        else:
            w = rng.uniform(-self.init_scale, self.init_scale, size=(self.n_in, self.n_out))
        return {self.key("W"): w, self.key("b"): np.zeros(self.n_out)}

    def forward(self, params, x):
        if x.shape[-1] != self.n_in:
            raise ValueError(f"{self.name}: expected {self.n_in} input features, got {x.shape[-1]}.")
        return x @ params[self.key("W")] + params[self.key("b")], x

    def backward(self, params, cache, dy, grads):
        x = cache
        grads[self.key("W")] += x.T @ dy
        grads[self.key("b")] += dy.sum(axis=0)
        return dy @ params[self.key("W")].T


class Conv2d(Layer):
    """2-D convolution over (N, C, H, W) inputs with zero padding."""

    def __init__(
        self,
        name: str,
        c_in: int,
        c_out: int,
        kernel: Optional[int] = 3,
        stride: Optional[int] = 2,
        padding: Optional[int] = 1,
    ):
        super().__init__(name)
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride, self.padding = kernel, stride, padding

    def init(self, rng):
        fan_in = self.c_in * self.kernel * self.kernel
        shape = (self.c_out, self.c_in, self.kernel, self.kernel)
        return {self.key("W"): _he_uniform(rng, shape, fan_in), self.key("b"): np.zeros(self.c_out)}

    def output_size(self, size: int) -> int:
        return (size + 2 * self.padding - self.kernel) // self.stride + 1

    def _windows(self, x):
        p, k, s = self.padding, self.kernel, self.stride
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
        return xp, win[:, :, ::s, ::s]

    def forward(self, params, x):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ValueError(f"{self.name}: expected (N, {self.c_in}, H, W) input, got {x.shape}.")
        xp, win = self._windows(x)
        w = params[self.key("W")]
        y = np.einsum("nchwij,ocij->nohw", win, w, optimize=True)
        y += params[self.key("b")][None, :, None, None]
        return y, (x.shape, xp.shape, win)

    def backward(self, params, cache, dy, grads):
        x_shape, xp_shape, win = cache
        w = params[self.key("W")]
        grads[self.key("W")] += np.einsum("nchwij,nohw->ocij", win, dy, optimize=True)
        grads[self.key("b")] += dy.sum(axis=(0, 2, 3))
        dwin = np.einsum("nohw,ocij->nchwij", dy, w, optimize=True)
        dxp = np.zeros(xp_shape)
        s, (ho, wo) = self.stride, dy.shape[2:]
        for i in range(self.kernel):
            for j in range(self.kernel):
                dxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += dwin[..., i, j]
        p = self.padding
        return dxp[:, :, p : p + x_shape[2], p : p + x_shape[3]]


class ReLU(Layer):
    def forward(self, params, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, params, cache, dy, grads):
        return dy * cache


class Tanh(Layer):
    def forward(self, params, x):
        y = np.tanh(x)
        return y, y

    def backward(self, params, cache, dy, grads):
        return dy * (1.0 - cache**2)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class Sigmoid(Layer):
    def forward(self, params, x):
        y = _sigmoid(x)
        return y, y

    def backward(self, params, cache, dy, grads):
        return dy * cache * (1.0 - cache)


class GlobalAvgPool(Layer):
    """Adaptive average pooling of (N, C, H, W) maps to (N, C)."""

    def forward(self, params, x):
        return x.mean(axis=(2, 3)), x.shape

    def backward(self, params, cache, dy, grads):
        n, c, h, w = cache
        return np.broadcast_to(dy[:, :, None, None] / (h * w), cache).copy()


class ChannelAttention(Layer):
    """Channel gate: pooled descriptor -> bottleneck MLP -> sigmoid scaling of each channel."""

    def __init__(self, name: str, channels: int, reduction: Optional[int] = 4):
        super().__init__(name)
        self.channels = channels
        self.hidden = max(channels // reduction, 1)
        self.fc1 = Dense(f"{name}.fc1", channels, self.hidden)
        self.fc2 = Dense(f"{name}.fc2", self.hidden, channels)

    def init(self, rng):
        return {**self.fc1.init(rng), **self.fc2.init(rng)}

    def forward(self, params, x):
        z = x.mean(axis=(2, 3))
        pre1, c1 = self.fc1.forward(params, z)
        h = np.maximum(pre1, 0.0)
        pre2, c2 = self.fc2.forward(params, h)
        g = _sigmoid(pre2)
        return x * g[:, :, None, None], (x, pre1, c1, c2, g)

    def backward(self, params, cache, dy, grads):
        x, pre1, c1, c2, g = cache
        dx = dy * g[:, :, None, None]
        dg = (dy * x).sum(axis=(2, 3))
        dh = self.fc2.backward(params, c2, dg * g * (1.0 - g), grads)
        dz = self.fc1.backward(params, c1, dh * (pre1 > 0), grads)
        h, w = x.shape[2:]
        return dx + dz[:, :, None, None] / (h * w)


class SpatialAttention(Layer):
    """Pixel gate: channel mean and max -> one convolution -> sigmoid scaling of each pixel."""

    def __init__(self, name: str, kernel: Optional[int] = 3):
        super().__init__(name)
        self.conv = Conv2d(f"{name}.conv", 2, 1, kernel=kernel, stride=1, padding=kernel // 2)

    def init(self, rng):
        return self.conv.init(rng)

    def forward(self, params, x):
        mean = x.mean(axis=1, keepdims=True)
        arg = x.argmax(axis=1)[:, None]
        peak = np.take_along_axis(x, arg, axis=1)
        pre, c = self.conv.forward(params, np.concatenate([mean, peak], axis=1))
        g = _sigmoid(pre)
        return x * g, (x, arg, c, g)

    def backward(self, params, cache, dy, grads):
        x, arg, c, g = cache
        dx = dy * g
        dg = (dy * x).sum(axis=1, keepdims=True)
        dcat = self.conv.backward(params, c, dg * g * (1.0 - g), grads)
        dx += dcat[:, 0:1] / x.shape[1]
        dpeak = np.zeros_like(x)
        np.put_along_axis(dpeak, arg, dcat[:, 1:2], axis=1)
        return dx + dpeak


class AttentionBlock(Layer):
    """Channel attention followed by spatial attention; the output shape equals the input shape."""

    def __init__(self, name: str, channels: int, reduction: Optional[int] = 4, kernel: Optional[int] = 3):
        super().__init__(name)
        self.channel = ChannelAttention(f"{name}.ch", channels, reduction)
        self.spatial = SpatialAttention(f"{name}.sp", kernel)

    def init(self, rng):
        return {**self.channel.init(rng), **self.spatial.init(rng)}

    def forward(self, params, x):
        y, c1 = self.channel.forward(params, x)
        y, c2 = self.spatial.forward(params, y)
        return y, (c1, c2)

    def backward(self, params, cache, dy, grads):
        c1, c2 = cache
        return self.channel.backward(params, c1, self.spatial.backward(params, c2, dy, grads), grads)


class Sequential(Layer):
    """A chain of layers; also usable on its own as a network (see :meth:`run`)."""

    def __init__(self, name: str, layers: Sequence[Layer]):
        super().__init__(name)
        self.layers = list(layers)

    def init(self, rng):
        params = {}
        for layer in self.layers:
            params.update(layer.init(rng))
        return params

    def init_params(self, rng: np.random.Generator) -> NetworkParams:
        return NetworkParams(self.init(rng))

    def forward(self, params, x):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(params, x)
            caches.append(cache)
        return x, caches

    def backward(self, params, cache, dy, grads):
        for layer, c in zip(reversed(self.layers), reversed(cache)):
            dy = layer.backward(params, c, dy, grads)
        return dy

    def run(self, params: NetworkParams, x: np.ndarray) -> Tuple[np.ndarray, Tape]:
        """Network-style forward returning a :class:`Tape`."""
        y, caches = self.forward(params, np.asarray(x, dtype=np.float64))
        return y, Tape(id(params), getattr(params, "version", 0), [caches])

    def gradients(self, params: NetworkParams, tape: Tape, dout: np.ndarray):
        """Network-style backward: (parameter gradients, (input gradient,))."""
        _check_tape(params, tape)
        grads = params.zeros_like()
        dx = self.backward(params, tape.caches[0], np.asarray(dout, dtype=np.float64), grads)
        return grads, (dx,)


@dataclass(frozen=True)
class NetSpec:
    """Channel and width lists of the dual-branch attention network."""

    branch: Tuple[int, ...]
    fusion: Tuple[int, ...]
    fc: Tuple[int, ...]
    head: Tuple[int, ...]
    reduction: int = 4
    kernel: int = 3
    stride: int = 2
    spatial_kernel: int = 3

    @classmethod
    def preset(cls, name: str) -> "NetSpec":
        if name not in NET_PRESETS:
            raise ValueError(f"Unknown network preset '{name}'; choose from {', '.join(NET_PRESETS)}.")
        return NET_PRESETS[name]


NET_PRESETS = {
    "reference": NetSpec(branch=(128, 256), fusion=(1024, 2048), fc=(4096, 2048), head=(512, 128), reduction=16),
    "desk": NetSpec(branch=(8, 16), fusion=(32,), fc=(64, 32), head=(16,), reduction=4),
}

ACTOR = "actor"
CRITIC = "critic"


class ActorCriticNet:
    """Dual-branch convolutional network with attention, used as actor or critic.

    S1 and S2 each pass through their own convolution branch; the branch maps are concatenated,
    fused by further convolutions, gated by an attention block and average-pooled. The critic
    appends the normalized action to the pooled vector. Shared dense layers feed one head per
    output: three tanh-squashed heads for the actor, one linear Q head for the critic.

    Args:
        spec (NetSpec | str): The architecture or a preset name (``reference``, ``desk``).
        role (str): ``actor`` or ``critic``.
        action_dim (int, optional): The action size. Defaults to 3.
    """

    def __init__(self, spec, role: str, action_dim: Optional[int] = 3):
        if isinstance(spec, str):
            spec = NetSpec.preset(spec)
        if role not in (ACTOR, CRITIC):
            raise ValueError(f"role must be '{ACTOR}' or '{CRITIC}', got '{role}'.")
        self.spec, self.role, self.action_dim = spec, role, action_dim
        k, s = spec.kernel, spec.stride

        def branch(prefix):
            layers, c_in = [], 1
            for index, c_out in enumerate(spec.branch):
                layers += [Conv2d(f"{prefix}.conv{index}", c_in, c_out, k, s, k // 2), ReLU(f"{prefix}.relu{index}")]
                c_in = c_out
            return Sequential(prefix, layers)

        self.branch1, self.branch2 = branch("s1"), branch("s2")
        layers, c_in = [], 2 * spec.branch[-1]
        for index, c_out in enumerate(spec.fusion):
            layers += [Conv2d(f"fusion.conv{index}", c_in, c_out, k, s, k // 2), ReLU(f"fusion.relu{index}")]
            c_in = c_out
        self.fusion = Sequential("fusion", layers)
        self.attention = AttentionBlock("attention", c_in, spec.reduction, spec.spatial_kernel)
        self.pool = GlobalAvgPool("pool")
        self.pooled = c_in

        layers, n_in = [], c_in + (action_dim if role == CRITIC else 0)
        for index, n_out in enumerate(spec.fc):
            layers += [Dense(f"fc{index}", n_in, n_out), ReLU(f"fc.relu{index}")]
            n_in = n_out
        self.trunk = Sequential("fc", layers)

        n_heads = action_dim if role == ACTOR else 1
        self.heads = []
        for h in range(n_heads):
            prefix = f"head{h}"
            layers, width = [], n_in
            for index, n_out in enumerate(spec.head):
                layers += [Dense(f"{prefix}.fc{index}", width, n_out), ReLU(f"{prefix}.relu{index}")]
                width = n_out
            # Small output weights keep the initial policy and Q estimates near zero.
            layers.append(Dense(f"{prefix}.out", width, 1, init_scale=3e-3))
            if role == ACTOR:
                layers.append(Tanh(f"{prefix}.tanh"))
            self.heads.append(Sequential(prefix, layers))

    def init_params(self, rng: np.random.Generator) -> NetworkParams:
        params = NetworkParams()
        for part in [self.branch1, self.branch2, self.fusion, self.attention, self.trunk] + self.heads:
            params.update(part.init(rng))
        return params

    def forward(
        self,
        params: NetworkParams,
        states: np.ndarray,
        actions: Optional[np.ndarray] = None,
    ) -> Tuple[np.ndarray, Tape]:
        """Evaluates the network.

        Args:
            params (NetworkParams): The parameters.
            states (numpy.ndarray): (N, 2, m, n) or (2, m, n) stacked state matrices.
            actions (numpy.ndarray, optional): (N, action_dim) normalized actions (critic only).

        Raises:
            ValueError: On a shape mismatch (naming the layer) or a missing critic action.

        Returns:
            tuple: (N, 3) actor outputs in (-1, 1) or (N, 1) Q-values, and the tape.
        """
        x = np.asarray(states, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or x.shape[1] != 2:
            raise ValueError(f"input: expected (N, 2, m, n) states, got {x.shape}.")
        y1, c_b1 = self.branch1.forward(params, x[:, 0:1])
        y2, c_b2 = self.branch2.forward(params, x[:, 1:2])
        y, c_fu = self.fusion.forward(params, np.concatenate([y1, y2], axis=1))
        y, c_att = self.attention.forward(params, y)
        v, c_pool = self.pool.forward(params, y)
        if self.role == CRITIC:
            if actions is None:
                raise ValueError("critic: an action batch is required.")
            a = np.asarray(actions, dtype=np.float64).reshape(len(v), self.action_dim)
            v = np.concatenate([v, a], axis=1)
        h, c_fc = self.trunk.forward(params, v)
        outs, c_heads = [], []
        for head in self.heads:
            o, c = head.forward(params, h)
            outs.append(o)
            c_heads.append(c)
        caches = [c_b1, c_b2, y1.shape[1], c_fu, c_att, c_pool, c_fc, c_heads]
        return np.concatenate(outs, axis=1), Tape(id(params), getattr(params, "version", 0), caches)

    def backward(self, params: NetworkParams, tape: Tape, dout: np.ndarray):
        """Reverse-mode gradients of ``sum(out * dout)``.

        Raises:
            RuntimeError: If the tape is stale.

        Returns:
            tuple: (parameter gradients, (state gradient, action gradient or None)).
        """
        _check_tape(params, tape)
        c_b1, c_b2, split, c_fu, c_att, c_pool, c_fc, c_heads = tape.caches
        dout = np.asarray(dout, dtype=np.float64)
        grads = params.zeros_like()
        dh = 0.0
        for index, (head, c) in enumerate(zip(self.heads, c_heads)):
            dh = dh + head.backward(params, c, dout[:, index : index + 1], grads)
        dv = self.trunk.backward(params, c_fc, dh, grads)
        da = None
        if self.role == CRITIC:
            dv, da = dv[:, : self.pooled], dv[:, self.pooled :]
        dy = self.pool.backward(params, c_pool, dv, grads)
        dy = self.attention.backward(params, c_att, dy, grads)
        dy = self.fusion.backward(params, c_fu, dy, grads)
        dx1 = self.branch1.backward(params, c_b1, dy[:, :split], grads)
        dx2 = self.branch2.backward(params, c_b2, dy[:, split:], grads)
        return grads, (np.concatenate([dx1, dx2], axis=1), da)

    # Network-style aliases shared with Sequential.
    def run(self, params, states, actions=None):
        return self.forward(params, states, actions)

    def gradients(self, params, tape, dout):
        return self.backward(params, tape, dout)


def init_params(net, rng: np.random.Generator) -> NetworkParams:
    """He-uniform weights and zero biases for a network or layer chain."""
    return net.init_params(rng)


@dataclass
class AdamState:
    """Adam moments and step counter for one parameter set."""

    lr: float = 1.0e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1.0e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Mapping, lr: Optional[float] = 1.0e-4) -> "AdamState":
        return cls(
            lr=lr,
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(params: NetworkParams, grads: Mapping, state: AdamState) -> NetworkParams:
    """One bias-corrected Adam descent step, in place; bumps the parameter version.

    Raises:
        ValueError: If a gradient shape does not match its parameter.
    """
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ValueError(f"{key}: gradient shape {g.shape} does not match {p.shape}.")
        state.m[key] = state.beta1 * state.m[key] + (1.0 - state.beta1) * g
        state.v[key] = state.beta2 * state.v[key] + (1.0 - state.beta2) * g * g
        m_hat = state.m[key] / c1
        v_hat = state.v[key] / c2
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    if isinstance(params, NetworkParams):
        params.bump()
    return params


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: Optional[float] = 1e-6) -> float:
    """Max of ``|a - n| / max(|a| + |n|, floor)``."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor)))


def gradient_check(
    net,
    params: NetworkParams,
    inputs: Sequence[np.ndarray],
    eps: Optional[float] = 1e-5,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Compares backward gradients with central differences over every parameter and input.

    The scalar checked is ``sum(out * R)`` for a fixed random ``R``.

    Args:
        net: An :class:`ActorCriticNet` or :class:`Sequential` (anything with ``run`` and
            ``gradients``).
        params (NetworkParams): The parameters (restored after the check).
        inputs (list): The network inputs.
        eps (float, optional): The finite-difference step. Defaults to 1e-5.
        rng (numpy.random.Generator, optional): Draws ``R``. Defaults to a seed-0 stream.

    Returns:
        float: The maximum relative error.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    inputs = [np.array(x, dtype=np.float64, copy=True) for x in inputs]
    out, tape = net.run(params, *inputs)
    weights = rng.standard_normal(out.shape)
    grads, input_grads = net.gradients(params, tape, weights)

    def loss():
        return float(np.sum(net.run(params, *inputs)[0] * weights))

    def numeric(array):
        result = np.zeros_like(array)
        flat, out_flat = array.reshape(-1), result.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            plus = loss()
            flat[i] = saved - eps
            minus = loss()
            flat[i] = saved
            out_flat[i] = (plus - minus) / (2.0 * eps)
        return result

    worst = 0.0
    for key, p in params.items():
        worst = max(worst, relative_error(grads[key], numeric(p)))
    for x, dx in zip(inputs, input_grads):
        if dx is not None:
            worst = max(worst, relative_error(dx, numeric(x)))
    return worst


def save_params(params: Mapping[str, np.ndarray], file_path: str, meta: Optional[Dict] = None) -> str:
    """Writes parameters to the binary checkpoint format.

    Layout: magic, format version (uint16), metadata JSON (uint32 length + UTF-8), entry count
    (uint32), then per entry the name (uint16 length + UTF-8), ndim (uint8) and dims (uint32 each),
    then all values as little-endian float64 in entry order.

    Args:
        params (Mapping): Named arrays.
        file_path (str): The output path.
        meta (dict, optional): Metadata such as the preset and role. Defaults to None.

    Returns:
        str: The absolute path of the written file.
    """
    file_path = check_file_path(file_path)
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with open(file_path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<HI", CHECKPOINT_VERSION, len(meta_bytes)))
        f.write(meta_bytes)
        f.write(struct.pack("<I", len(params)))
        for name, value in params.items():
            encoded = name.encode("utf-8")
            shape = np.shape(value)
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack(f"<B{len(shape)}I", len(shape), *shape))
        for value in params.values():
            f.write(np.ascontiguousarray(value, dtype="<f8").tobytes())
    return file_path


def load_params(file_path: str, template: Optional[Mapping] = None) -> Tuple[NetworkParams, Dict]:
    """Reads a checkpoint written by :func:`save_params`.

    Args:
        file_path (str): The checkpoint path.
        template (Mapping, optional): Expected names and shapes; a mismatch is an error.

    Raises:
        FileNotFoundError: If the file does not exist.
        RuntimeError: If the file is not a checkpoint or is incompatible with the template.

    Returns:
        tuple: The parameters and the metadata dict.
    """
    if not os.path.exists(file_path):
        raise FileNotFoundError(f"{file_path} does not exist.")
    with open(file_path, "rb") as f:
        data = f.read()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise RuntimeError(f"{file_path} is not a skytwin checkpoint.")
    offset = len(CHECKPOINT_MAGIC)
    version, meta_len = struct.unpack_from("<HI", data, offset)
    offset += struct.calcsize("<HI")
    if version != CHECKPOINT_VERSION:
        raise RuntimeError(f"Unsupported checkpoint version {version}.")
    meta = json.loads(data[offset : offset + meta_len].decode("utf-8"))
    offset += meta_len
    (count,) = struct.unpack_from("<I", data, offset)
    offset += 4
    table = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", data, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", data, offset)
        offset += 4 * ndim
        table.append((name, tuple(shape)))

    params = NetworkParams()
    for name, shape in table:
        size = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(data, dtype="<f8", count=size, offset=offset).astype(np.float64)
        params[name] = values.reshape(shape)
        offset += 8 * size

    if template is not None:
        expected = [(k, tuple(np.shape(v))) for k, v in template.items()]
        if expected != table:
            missing = {k for k, _ in expected} ^ {k for k, _ in table}
            detail = f"differing names {sorted(missing)[:5]}" if missing else "differing shapes"
            raise RuntimeError(f"Incompatible checkpoint {file_path}: {detail}.")
    return params, meta
