"""Transformer encoder building blocks over :class:`Tensor`.

Token grids are laid out ``(batch, tokens, features)``; an unbatched
``(tokens, features)`` grid works as well wherever broadcasting allows.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from mtecache.errors import ConfigError, NumericalError
from mtecache.nn import tensor as T
from mtecache.nn.tensor import Tensor

LAYER_NORM_EPS = 1e-5


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 2
    model_dim: int = 64
    heads: int = 16
    mlp_layers: int = 2
    mlp_size: int = 256
    activation: str = "gelu"
    kernel_size: int = 3

    def __post_init__(self):
        bad = [
            name
            for name in ("layers", "model_dim", "heads", "mlp_layers", "mlp_size", "kernel_size")
            if getattr(self, name) < 1
        ]
        if bad:
            raise ConfigError(f"encoder counts must be >= 1: {', '.join(bad)}")
        if self.model_dim % self.heads:
            raise ConfigError(
                f"model_dim={self.model_dim} is not divisible by heads={self.heads}"
            )
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be odd for same-padding")

    @property
    def head_dim(self):
        return self.model_dim // self.heads


ACTIVATIONS = {"gelu": T.gelu, "relu": T.relu}


class ParameterStore:
    """Ordered name -> Tensor mapping; every entry is a trainable leaf."""

    def __init__(self):
        self._params = OrderedDict()

    def add(self, name, value):
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def count(self):
        return int(sum(p.size for p in self._params.values()))

    def state_dict(self):
        return OrderedDict((k, v.data.copy()) for k, v in self._params.items())

    def load_state_dict(self, state):
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for k, v in state.items():
            if self._params[k].shape != np.shape(v):
                raise ValueError(f"shape mismatch for {k}: {self._params[k].shape} vs {np.shape(v)}")
            self._params[k].data = np.array(v, dtype=np.float64)


def xavier_uniform(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


# ---------------------------------------------------------------- embedding


def embed_sequence(x, weight, bias, pos, kernel_size=1):
    """Project an ``N_c x L`` sample (or a batch of them) to ``L x d`` tokens.

    ``weight`` has shape ``(kernel_size * N_c, d)``: block ``j`` holds the
    kernel tap applied to time offset ``j - kernel_size // 2``. With
    ``kernel_size == 1`` this is the plain per-column projection
    ``x_u W + b``. The time axis is zero-padded so the output keeps ``L``
    tokens, and the positional table ``pos`` (``L x d``) is added last.
    """
    x = T.as_tensor(x)
    n_c = x.shape[-2]
    if weight.shape[0] != kernel_size * n_c:
        raise ValueError(
            f"embedding weight expects {weight.shape[0] // kernel_size} contents, got {n_c}"
        )
    tokens = T.swapaxes(x, -1, -2)  # (..., L, N_c)
    length = tokens.shape[-2]
    if pos.shape[-2] != length or pos.shape[-1] != weight.shape[1]:
        raise ValueError(f"positional table {pos.shape} does not fit {length} tokens")
    if kernel_size > 1:
        half = kernel_size // 2
        pad_shape = tokens.shape[:-2] + (half, n_c)
        zeros = Tensor(np.zeros(pad_shape))
        padded = T.concat([zeros, tokens, zeros], axis=-2)
        taps = [padded[..., j : j + length, :] for j in range(kernel_size)]
        tokens = T.concat(taps, axis=-1)
    return tokens @ weight + bias + pos


# ---------------------------------------------------------------- attention


def _check_finite(z, where):
    if not np.all(np.isfinite(z.data)):
        raise NumericalError(f"non-finite values entering {where}")


def self_attention(z, w_qkv):
    """Single-head scaled dot-product self-attention.

    ``w_qkv`` is ``d_in x 3 d_h``; its column blocks give Q, K and V.
    """
    z = T.as_tensor(z)
    _check_finite(z, "self_attention")
    d_h = w_qkv.shape[-1] // 3
    qkv = z @ w_qkv
    q, k, v = qkv[..., :d_h], qkv[..., d_h : 2 * d_h], qkv[..., 2 * d_h :]
    scores = (q @ T.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(d_h))
    return T.softmax(scores, axis=-1) @ v


def multi_head_attention(z, w_qkv, w_msa):
    """Run ``h`` attention heads in parallel, concatenate, project by ``w_msa``.

    ``w_qkv`` is either a stacked ``(h, d, 3 d_h)`` tensor or a list of
    per-head ``d x 3 d_h`` tensors.
    """
    z = T.as_tensor(z)
    _check_finite(z, "multi_head_attention")
    if isinstance(w_qkv, (list, tuple)):
        w_qkv = T.stack(w_qkv, axis=0)
    heads, d_in, width = w_qkv.shape
    d_h = width // 3
    if width != 3 * d_h or z.shape[-1] != d_in or w_msa.shape[0] != heads * d_h:
        raise ValueError(
            f"head shapes inconsistent: z {z.shape}, w_qkv {w_qkv.shape}, w_msa {w_msa.shape}"
        )
    zh = T.reshape(z, z.shape[:-2] + (1,) + z.shape[-2:])  # (..., 1, M, d)
    qkv = zh @ w_qkv  # (..., h, M, 3 d_h)
    q, k, v = qkv[..., :d_h], qkv[..., d_h : 2 * d_h], qkv[..., 2 * d_h :]
    scores = (q @ T.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(d_h))
    out = T.softmax(scores, axis=-1) @ v  # (..., h, M, d_h)
    out = T.swapaxes(out, -3, -2)  # (..., M, h, d_h)
    out = T.reshape(out, out.shape[:-2] + (heads * d_h,))
    return out @ w_msa


# ---------------------------------------------------------------- encoder


def mlp_block(z, weights, biases, activation="gelu"):
    act = ACTIVATIONS[activation]
    h = z
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        h = h @ w + b
        if i < last:
            h = act(h)
    return h


def encoder_layer(z, p, prefix, activation="gelu"):
    """Pre-norm residual layer: attention sublayer, then feed-forward sublayer."""
    h = T.layer_norm(z, p[f"{prefix}.ln1.gain"], p[f"{prefix}.ln1.bias"], LAYER_NORM_EPS)
    z = multi_head_attention(h, p[f"{prefix}.attn.w_qkv"], p[f"{prefix}.attn.w_msa"]) + z
    h = T.layer_norm(z, p[f"{prefix}.ln2.gain"], p[f"{prefix}.ln2.bias"], LAYER_NORM_EPS)
    weights, biases = [], []
    i = 0
    while f"{prefix}.mlp.{i}.weight" in p:
        weights.append(p[f"{prefix}.mlp.{i}.weight"])
        biases.append(p[f"{prefix}.mlp.{i}.bias"])
        i += 1
    return mlp_block(h, weights, biases, activation) + z


def transformer_encode(z0, config, p, prefix):
    z = z0
    for i in range(config.layers):
        z = encoder_layer(z, p, f"{prefix}.layers.{i}", config.activation)
    return z


def init_encoder(store, rng, config, prefix, n_contents, n_tokens):
    """Register embedding + encoder-layer parameters under ``prefix``."""
    d, h, d_h = config.model_dim, config.heads, config.head_dim
    k = config.kernel_size
    store.add(f"{prefix}.embed.weight", xavier_uniform(rng, k * n_contents, d))
    store.add(f"{prefix}.embed.bias", np.zeros(d))
    store.add(f"{prefix}.pos", rng.normal(0.0, 0.02, size=(n_tokens, d)))
    for i in range(config.layers):
        lp = f"{prefix}.layers.{i}"
        store.add(f"{lp}.ln1.gain", np.ones(d))
        store.add(f"{lp}.ln1.bias", np.zeros(d))
        store.add(f"{lp}.attn.w_qkv", xavier_uniform(rng, d, 3 * d_h, shape=(h, d, 3 * d_h)))
        store.add(f"{lp}.attn.w_msa", xavier_uniform(rng, h * d_h, d))
        store.add(f"{lp}.ln2.gain", np.ones(d))
        store.add(f"{lp}.ln2.bias", np.zeros(d))
        widths = [d] + [config.mlp_size] * config.mlp_layers + [d]
        for j, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            store.add(f"{lp}.mlp.{j}.weight", xavier_uniform(rng, fan_in, fan_out))
            store.add(f"{lp}.mlp.{j}.bias", np.zeros(fan_out))


def encode(x, p, config, prefix):
    """Embedding followed by the encoder stack for one path."""
    z0 = embed_sequence(
        x, p[f"{prefix}.embed.weight"], p[f"{prefix}.embed.bias"], p[f"{prefix}.pos"],
        config.kernel_size,
    )
    return transformer_encode(z0, config, p, prefix)
