"""Transformer encoder and MLP projection heads built on the autodiff tape.

Parameters live in a flat name -> Param store so the optimizer, the EMA
update, and checkpointing can all walk one namespace. Forward functions
bind store entries to graph tensors on demand.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, gelu_t, softmax


class NeuralError(ValueError):
    pass


@dataclass(frozen=True)
class Param:
    """A named parameter array with immutable role flags.

    trainable=False marks running statistics (updated by forward passes,
    never by the optimizer). reinitialized=True marks tensors drawn fresh
    rather than carried over from a pretrained encoder; the warm-up phase
    updates only these.
    """

    data: np.ndarray
    trainable: bool = True
    reinitialized: bool = False


class ParamStore:
    """Ordered mapping of parameter names to Param entries."""

    def __init__(self):
        self._params: dict[str, Param] = {}

    def add(self, name: str, data: np.ndarray, trainable: bool = True,
            reinitialized: bool = False) -> None:
        if name in self._params:
            raise NeuralError(f"duplicate parameter name: {name}")
        self._params[name] = Param(np.asarray(data), trainable, reinitialized)

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def copy(self) -> "ParamStore":
        other = ParamStore()
        for name, p in self._params.items():
            other.add(name, p.data.copy(), p.trainable, p.reinitialized)
        return other

    def bind(self, requires_grad: bool = False) -> dict[str, Tensor]:
        """Expose entries as graph tensors. The tensors alias the stored
        arrays, so running-statistic writes go through to the store."""
        return {
            name: Tensor(p.data, requires_grad and p.trainable)
            for name, p in self._params.items()
        }


def count_parameters(store: ParamStore, trainable_only: bool = False) -> int:
    return sum(
        p.data.size
        for p in store._params.values()
        if p.trainable or not trainable_only
    )


# -- configurations ----------------------------------------------------------


@dataclass(frozen=True)
class EncoderConfig:
    in_dim: int = 40
    n_layers: int = 12
    d_model: int = 768
    n_heads: int = 12
    d_ff: int = 3072
    reinit_last_n: int = 3
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise NeuralError("d_model must be divisible by n_heads")
        if not (0 <= self.reinit_last_n <= self.n_layers):
            raise NeuralError("reinit_last_n out of range")
        for name in ("in_dim", "n_layers", "d_model", "n_heads", "d_ff"):
            if getattr(self, name) < 1:
                raise NeuralError(f"{name} must be positive")


@dataclass(frozen=True)
class MlpHeadConfig:
    in_dim: int = 768
    hidden: int = 2048
    out: int = 256
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        for name in ("in_dim", "hidden", "out"):
            if getattr(self, name) < 1:
                raise NeuralError(f"{name} must be positive")


# -- initialization ----------------------------------------------------------

_INIT_STD = 0.02


def _linear_init(store: ParamStore, prefix: str, d_in: int, d_out: int,
                 rng: np.random.Generator, dtype, reinit: bool) -> None:
    store.add(f"{prefix}.w",
              rng.normal(0.0, _INIT_STD, size=(d_in, d_out)).astype(dtype),
              reinitialized=reinit)
    store.add(f"{prefix}.b", np.zeros(d_out, dtype=dtype), reinitialized=reinit)


def build_encoder_params(cfg: EncoderConfig, rng: np.random.Generator,
                         dtype=np.float32) -> ParamStore:
    """Fresh encoder parameters. The last cfg.reinit_last_n blocks carry the
    reinitialized flag (they would be drawn fresh on top of a pretrained
    stack, so warm-up optimizes only them plus the heads)."""
    store = ParamStore()
    _linear_init(store, "input_proj", cfg.in_dim, cfg.d_model, rng, dtype, False)
    for i in range(cfg.n_layers):
        reinit = i >= cfg.n_layers - cfg.reinit_last_n
        pre = f"layer{i}"
        store.add(f"{pre}.ln1.g", np.ones(cfg.d_model, dtype=dtype), reinitialized=reinit)
        store.add(f"{pre}.ln1.b", np.zeros(cfg.d_model, dtype=dtype), reinitialized=reinit)
        for part in ("q", "k", "v", "o"):
            _linear_init(store, f"{pre}.attn.{part}", cfg.d_model, cfg.d_model,
                         rng, dtype, reinit)
        store.add(f"{pre}.ln2.g", np.ones(cfg.d_model, dtype=dtype), reinitialized=reinit)
        store.add(f"{pre}.ln2.b", np.zeros(cfg.d_model, dtype=dtype), reinitialized=reinit)
        _linear_init(store, f"{pre}.ff.fc1", cfg.d_model, cfg.d_ff, rng, dtype, reinit)
        _linear_init(store, f"{pre}.ff.fc2", cfg.d_ff, cfg.d_model, rng, dtype, reinit)
    return store


def build_head_params(cfg: MlpHeadConfig, rng: np.random.Generator, prefix: str,
                      store: ParamStore | None = None,
                      dtype=np.float32) -> ParamStore:
    """MLP head parameters (linear, batch norm, GELU, linear). Heads are
    always reinitialized; batch-norm running stats are non-trainable."""
    if store is None:
        store = ParamStore()
    _linear_init(store, f"{prefix}.fc1", cfg.in_dim, cfg.hidden, rng, dtype, True)
    store.add(f"{prefix}.bn.g", np.ones(cfg.hidden, dtype=dtype), reinitialized=True)
    store.add(f"{prefix}.bn.b", np.zeros(cfg.hidden, dtype=dtype), reinitialized=True)
    store.add(f"{prefix}.bn.mean", np.zeros(cfg.hidden, dtype=dtype),
              trainable=False, reinitialized=True)
    store.add(f"{prefix}.bn.var", np.ones(cfg.hidden, dtype=dtype),
              trainable=False, reinitialized=True)
    _linear_init(store, f"{prefix}.fc2", cfg.hidden, cfg.out, rng, dtype, True)
    return store


# -- forward pieces ----------------------------------------------------------


def sinusoidal_positions(n_frames: int, d_model: int, dtype=np.float32) -> np.ndarray:
    """Fixed sin/cos position table, shape (n_frames, d_model)."""
    pos = np.arange(n_frames, dtype=np.float64)[:, None]
    dim = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, dim / d_model)
    table = np.zeros((n_frames, d_model), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return table.astype(dtype)


def layer_norm_t(x: Tensor, g: Tensor, b: Tensor, eps: float) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    return centered / (var + eps).sqrt() * g + b


def _linear_t(x: Tensor, p: dict, prefix: str) -> Tensor:
    return x @ p[f"{prefix}.w"] + p[f"{prefix}.b"]


def _attention_t(x: Tensor, p: dict, prefix: str, cfg: EncoderConfig) -> Tensor:
    n_frames = x.shape[0]
    d_head = cfg.d_model // cfg.n_heads

    def heads(t: Tensor) -> Tensor:
        return t.reshape(n_frames, cfg.n_heads, d_head).transpose((1, 0, 2))

    q = heads(_linear_t(x, p, f"{prefix}.attn.q"))
    k = heads(_linear_t(x, p, f"{prefix}.attn.k"))
    v = heads(_linear_t(x, p, f"{prefix}.attn.v"))
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(d_head))
    mixed = softmax(scores, axis=-1) @ v
    merged = mixed.transpose((1, 0, 2)).reshape(n_frames, cfg.d_model)
    return _linear_t(merged, p, f"{prefix}.attn.o")


def _block_t(x: Tensor, p: dict, prefix: str, cfg: EncoderConfig) -> Tensor:
    normed = layer_norm_t(x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"], cfg.ln_eps)
    x = x + _attention_t(normed, p, prefix, cfg)
    normed = layer_norm_t(x, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"], cfg.ln_eps)
    hidden = gelu_t(_linear_t(normed, p, f"{prefix}.ff.fc1"))
    return x + _linear_t(hidden, p, f"{prefix}.ff.fc2")


def encoder_apply(p: dict, x: Tensor, cfg: EncoderConfig) -> list[Tensor]:
    """Run the encoder on bound tensors; returns per-depth frame
    representations, index 0 before any block and index i after block i."""
    h = _linear_t(x, p, "input_proj")
    h = h + Tensor(sinusoidal_positions(x.shape[0], cfg.d_model, x.dtype))
    states = [h]
    for i in range(cfg.n_layers):
        h = _block_t(h, p, f"layer{i}", cfg)
        states.append(h)
    return states


def head_apply(p: dict, x: Tensor, prefix: str, cfg: MlpHeadConfig,
               training: bool, update_running: bool = True) -> Tensor:
    """MLP head forward. In training mode the normalization uses batch
    statistics over frames; with update_running the running estimates stored
    under {prefix}.bn.* are updated in place (bound tensors alias the store)."""
    h = _linear_t(x, p, f"{prefix}.fc1")
    if training:
        if h.shape[0] < 2:
            raise NeuralError("batch norm in training mode needs at least 2 frames")
        mu = h.mean(axis=0, keepdims=True)
        var = ((h - mu) ** 2).mean(axis=0, keepdims=True)
        if update_running:
            running_mean = p[f"{prefix}.bn.mean"].data
            running_var = p[f"{prefix}.bn.var"].data
            m = cfg.bn_momentum
            running_mean *= 1.0 - m
            running_mean += m * mu.data.reshape(-1).astype(running_mean.dtype)
            running_var *= 1.0 - m
            running_var += m * var.data.reshape(-1).astype(running_var.dtype)
        h = (h - mu) / (var + cfg.bn_eps).sqrt()
    else:
        mean = Tensor(p[f"{prefix}.bn.mean"].data)
        var = Tensor(p[f"{prefix}.bn.var"].data)
        h = (h - mean) / (var + cfg.bn_eps).sqrt()
    h = h * p[f"{prefix}.bn.g"] + p[f"{prefix}.bn.b"]
    return _linear_t(gelu_t(h), p, f"{prefix}.fc2")


# -- plain-array front ends --------------------------------------------------


def encoder_forward(store: ParamStore, features: np.ndarray,
                    cfg: EncoderConfig, layer: int | str = "all"):
    """Encode a (frames, in_dim) array. layer="all" returns the list of all
    depth outputs (0 through n_layers); an integer selects one depth."""
    x = np.asarray(features)
    if x.ndim != 2 or x.shape[1] != cfg.in_dim:
        raise NeuralError(f"expected (frames, {cfg.in_dim}) input, got {x.shape}")
    states = encoder_apply(store.bind(), Tensor(x), cfg)
    if layer == "all":
        return [s.data for s in states]
    if not (0 <= layer <= cfg.n_layers):
        raise NeuralError(f"layer index {layer} out of range 0..{cfg.n_layers}")
    return states[layer].data


def mlp_head_forward(store: ParamStore, features: np.ndarray, prefix: str,
                     cfg: MlpHeadConfig, training: bool = False,
                     update_running: bool = True) -> np.ndarray:
    return head_apply(store.bind(), Tensor(np.asarray(features)), prefix, cfg,
                      training, update_running).data
