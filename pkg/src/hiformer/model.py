"""Encoder-only forecasting network with dual gated attention.

One attention token per turbine: the raw history window of each turbine is
embedded into a ``hidden_dim``-wide state, so attention runs over turbines,
not over time steps.  Every encoder layer scores turbine-to-turbine
relevance twice, once conditioned on the decomposition-mode embeddings and
once on the weather embeddings, then fuses the two results through a
sigmoid gate, followed by the usual residual/norm/feed-forward wiring.
A final projection maps each turbine's state to the forecast horizon.

Public functions mirror the single-sample shapes ((D, N) states and so
on); ``forward_batch`` carries a leading batch axis and is what training
uses.  All math runs on the :mod:`hiformer.tensor` engine so gradients
come for free.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .ioutil import atomic_path
from .tensor import Tensor

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Shape and capacity settings for one model instance."""

    history_len: int
    horizon: int
    n_turbines: int
    n_weather: int
    n_modes: int
    hidden_dim: int
    n_heads: int
    head_dim: int
    n_layers: int
    dropout: float = 0.1
    ffn_hidden: int | None = None
    node_dims: int = 64
    projection_hidden: int = 0
    gate_override: float | None = None

    def validate(self) -> None:
        if self.hidden_dim != self.n_heads * self.head_dim:
            raise ConfigError(
                f"hidden_dim must equal n_heads * head_dim, got "
                f"{self.hidden_dim} != {self.n_heads} * {self.head_dim}"
            )
        for name in ("history_len", "horizon", "n_turbines", "n_weather", "n_modes",
                     "hidden_dim", "n_heads", "head_dim", "n_layers", "node_dims"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.projection_hidden < 0:
            raise ConfigError(f"projection_hidden must be >= 0, got {self.projection_hidden}")
        if self.gate_override is not None and not 0.0 <= self.gate_override <= 1.0:
            raise ConfigError(f"gate_override must lie in [0, 1], got {self.gate_override}")

    @property
    def ffn_width(self) -> int:
        if self.ffn_hidden is not None:
            return self.ffn_hidden
        return 4 * self.hidden_dim if self.hidden_dim >= 512 else 2 * self.hidden_dim

    def to_dict(self) -> dict:
        return {
            "history_len": self.history_len, "horizon": self.horizon,
            "n_turbines": self.n_turbines, "n_weather": self.n_weather,
            "n_modes": self.n_modes, "hidden_dim": self.hidden_dim,
            "n_heads": self.n_heads, "head_dim": self.head_dim,
            "n_layers": self.n_layers, "dropout": self.dropout,
            "ffn_hidden": self.ffn_hidden, "node_dims": self.node_dims,
            "projection_hidden": self.projection_hidden,
            "gate_override": self.gate_override,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class MlpParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def named(self, prefix):
        return [(f"{prefix}.w1", self.w1), (f"{prefix}.b1", self.b1),
                (f"{prefix}.w2", self.w2), (f"{prefix}.b2", self.b2)]


@dataclass
class LinearParams:
    w: Tensor
    b: Tensor

    def named(self, prefix):
        return [(f"{prefix}.w", self.w), (f"{prefix}.b", self.b)]


@dataclass
class AttentionParams:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor

    def named(self, prefix):
        return [(f"{prefix}.{n}", getattr(self, n)) for n in ("wq", "bq", "wk", "bk", "wv", "bv")]


@dataclass
class GateParams:
    mix_a: Tensor  # (D, D), multiplies the mode-attention state
    mix_b: Tensor  # (D, D), multiplies the weather-attention state
    bias: Tensor   # (D, N), per-turbine gate bias

    def named(self, prefix):
        return [(f"{prefix}.mix_a", self.mix_a), (f"{prefix}.mix_b", self.mix_b),
                (f"{prefix}.bias", self.bias)]


@dataclass
class LayerNormParams:
    gain: Tensor
    bias: Tensor

    def named(self, prefix):
        return [(f"{prefix}.gain", self.gain), (f"{prefix}.bias", self.bias)]


@dataclass
class EncoderLayerParams:
    reduce_modes: Tensor    # (M, 1) softmax logits over decomposition modes
    reduce_weather: Tensor  # (C, 1) softmax logits over weather features
    mode_attn: AttentionParams
    weather_attn: AttentionParams
    gate: GateParams
    norm1: LayerNormParams
    norm2: LayerNormParams
    ffn: MlpParams

    def named(self, prefix):
        out = [(f"{prefix}.reduce_modes", self.reduce_modes),
               (f"{prefix}.reduce_weather", self.reduce_weather)]
        out += self.mode_attn.named(f"{prefix}.mode_attn")
        out += self.weather_attn.named(f"{prefix}.weather_attn")
        out += self.gate.named(f"{prefix}.gate")
        out += self.norm1.named(f"{prefix}.norm1")
        out += self.norm2.named(f"{prefix}.norm2")
        out += self.ffn.named(f"{prefix}.ffn")
        return out


@dataclass
class HiformerParams:
    """Every learnable tensor of one model, in a stable iteration order."""

    input_embed: MlpParams
    imf_embed: MlpParams
    weather_embed: MlpParams
    spatial_embed: LinearParams
    layers: list[EncoderLayerParams] = field(default_factory=list)
    projection: LinearParams | MlpParams = None

    def named(self) -> list[tuple[str, Tensor]]:
        out = self.input_embed.named("input_embed")
        out += self.imf_embed.named("imf_embed")
        out += self.weather_embed.named("weather_embed")
        out += self.spatial_embed.named("spatial_embed")
        for i, layer in enumerate(self.layers):
            out += layer.named(f"layer{i}")
        out += self.projection.named("projection")
        return out

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named()]

    def count(self) -> int:
        return sum(t.size for t in self.tensors())

    def zero_grad(self) -> None:
        for t in self.tensors():
            t.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self.named():
            if name not in arrays:
                raise ConfigError(f"checkpoint is missing parameter {name!r}")
            src = arrays[name]
            if src.shape != t.shape:
                raise ShapeError(f"parameter {name!r} shape {src.shape} != expected {t.shape}")
            t.data = src.astype(t.data.dtype, copy=True)


def _uniform(rng, fan_in, shape):
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(T.default_dtype()), requires_grad=True)


def _zeros(shape):
    return Tensor(np.zeros(shape, dtype=T.default_dtype()), requires_grad=True)


def _ones(shape):
    return Tensor(np.ones(shape, dtype=T.default_dtype()), requires_grad=True)


def _mlp(rng, n_in, n_hidden, n_out) -> MlpParams:
    return MlpParams(
        w1=_uniform(rng, n_in, (n_hidden, n_in)), b1=_zeros((n_hidden, 1)),
        w2=_uniform(rng, n_hidden, (n_out, n_hidden)), b2=_zeros((n_out, 1)),
    )


def _attention_params(rng, d) -> AttentionParams:
    return AttentionParams(
        wq=_uniform(rng, 2 * d, (d, 2 * d)), bq=_zeros((d, 1)),
        wk=_uniform(rng, 2 * d, (d, 2 * d)), bk=_zeros((d, 1)),
        wv=_uniform(rng, d, (d, d)), bv=_zeros((d, 1)),
    )


def init_params(cfg: ModelConfig, seed: int = 0) -> HiformerParams:
    """Fan-in-scaled uniform weights, zero biases, unit norm gains, neutral gate."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    d, h = cfg.hidden_dim, cfg.ffn_width
    layers = []
    for _ in range(cfg.n_layers):
        layers.append(
            EncoderLayerParams(
                reduce_modes=_zeros((cfg.n_modes, 1)),
                reduce_weather=_zeros((cfg.n_weather, 1)),
                mode_attn=_attention_params(rng, d),
                weather_attn=_attention_params(rng, d),
                gate=GateParams(
                    mix_a=_uniform(rng, d, (d, d)),
                    mix_b=_uniform(rng, d, (d, d)),
                    bias=_zeros((d, cfg.n_turbines)),
                ),
                norm1=LayerNormParams(gain=_ones((d, 1)), bias=_zeros((d, 1))),
                norm2=LayerNormParams(gain=_ones((d, 1)), bias=_zeros((d, 1))),
                ffn=_mlp(rng, d, h, d),
            )
        )
    if cfg.projection_hidden > 0:
        projection = _mlp(rng, d, cfg.projection_hidden, cfg.horizon)
    else:
        projection = LinearParams(w=_uniform(rng, d, (cfg.horizon, d)), b=_zeros((cfg.horizon, 1)))
    return HiformerParams(
        input_embed=_mlp(rng, cfg.history_len, h, d),
        imf_embed=_mlp(rng, cfg.history_len, h, d),
        weather_embed=_mlp(rng, cfg.history_len, h, d),
        spatial_embed=LinearParams(w=_uniform(rng, cfg.node_dims, (d, cfg.node_dims)), b=_zeros((d, 1))),
        layers=layers,
        projection=projection,
    )


def parameter_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count as a function of the config alone."""
    d, h, n = cfg.hidden_dim, cfg.ffn_width, cfg.n_turbines
    mlp = lambda n_in, n_hid, n_out: n_hid * n_in + n_hid + n_out * n_hid + n_out
    embeds = 3 * mlp(cfg.history_len, h, d) + (d * cfg.node_dims + d)
    attn = 2 * (d * 2 * d + d) + (d * d + d)
    per_layer = (
        cfg.n_modes + cfg.n_weather          # reduce logits
        + 2 * attn                           # two attention paths
        + 2 * d * d + d * n                  # gate
        + 4 * d                              # two layer-norm affines
        + mlp(d, h, d)                       # feed-forward
    )
    if cfg.projection_hidden > 0:
        proj = mlp(d, cfg.projection_hidden, cfg.horizon)
    else:
        proj = cfg.horizon * d + cfg.horizon
    return embeds + cfg.n_layers * per_layer + proj


def _as_const(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=T.default_dtype()))


def mlp_apply(p: MlpParams, x: Tensor) -> Tensor:
    """Two-layer perceptron over column vectors: w2 @ gelu(w1 @ x + b1) + b2."""
    hidden = T.gelu(T.add(T.matmul(p.w1, x), p.b1))
    return T.add(T.matmul(p.w2, hidden), p.b2)


def linear_apply(p: LinearParams, x: Tensor) -> Tensor:
    return T.add(T.matmul(p.w, x), p.b)


def _project(p, x: Tensor) -> Tensor:
    return mlp_apply(p, x) if isinstance(p, MlpParams) else linear_apply(p, x)


def _embed_stack(mlp: MlpParams, arr: Tensor, out_dim: int) -> Tensor:
    """Map (P, N, S) per-series windows through the shared MLP to (D, N, S)."""
    length, n, s = arr.shape
    flat = T.reshape(arr, (length, n * s))
    return T.reshape(mlp_apply(mlp, flat), (out_dim, n, s))


def embed_temporal(e_imf, params: HiformerParams) -> Tensor:
    """Embed each (turbine, mode) history series into the hidden width."""
    e_imf = _as_const(e_imf)
    out_dim = params.imf_embed.w2.shape[0]
    return _embed_stack(params.imf_embed, e_imf, out_dim)


def embed_weather(w, params: HiformerParams) -> Tensor:
    """Embed each (turbine, feature) weather series into the hidden width."""
    w = _as_const(w)
    out_dim = params.weather_embed.w2.shape[0]
    return _embed_stack(params.weather_embed, w, out_dim)


def embed_spatial(e_node, params: HiformerParams) -> Tensor:
    """Map node vectors (node_dims, N) to the hidden width, one linear layer."""
    return linear_apply(params.spatial_embed, _as_const(e_node))


def fuse_ste(e_s: Tensor, e_t: Tensor) -> Tensor:
    """Superimpose spatial embedding onto every mode slice: (D,N) + (D,N,M)."""
    d, n = e_s.shape
    return T.add(e_t, T.reshape(e_s, (d, n, 1)))


def fuse_swe(e_s: Tensor, e_w: Tensor) -> Tensor:
    """Superimpose spatial embedding onto every weather slice: (D,N) + (D,N,C)."""
    d, n = e_s.shape
    return T.add(e_w, T.reshape(e_s, (d, n, 1)))


def context_reduce(e: Tensor, logits: Tensor) -> Tensor:
    """Softmax-weighted combination over the trailing axis: (D,N,S) -> (D,N)."""
    d, n, s = e.shape
    weights = T.softmax(logits, axis=0)  # (S, 1)
    flat = T.reshape(e, (d * n, s))
    return T.reshape(T.matmul(flat, weights), (d, n))


def _split_heads(x: Tensor, n_heads: int, head_dim: int, batch: int, n: int, transpose_qk: bool) -> Tensor:
    """(D, B*N) -> (B*K, N, zeta) for queries/values or (B*K, zeta, N) for keys."""
    x = T.reshape(x, (n_heads, head_dim, batch, n))
    if transpose_qk:
        x = T.transpose(x, (2, 0, 1, 3))  # (B, K, zeta, N)
        return T.reshape(x, (batch * n_heads, head_dim, n))
    x = T.transpose(x, (2, 0, 3, 1))  # (B, K, N, zeta)
    return T.reshape(x, (batch * n_heads, n, head_dim))


def _merge_heads(x: Tensor, n_heads: int, head_dim: int, batch: int, n: int) -> Tensor:
    """(B*K, N, zeta) -> (D, B*N), heads concatenated along the hidden axis."""
    x = T.reshape(x, (batch, n_heads, n, head_dim))
    x = T.transpose(x, (1, 3, 0, 2))  # (K, zeta, B, N)
    return T.reshape(x, (n_heads * head_dim, batch * n))


def _attention(h: Tensor, context: Tensor, p: AttentionParams, n_heads: int, head_dim: int, batch: int) -> Tensor:
    """Unmasked multi-head attention over turbines; ``h`` is (D, B*N).

    Queries and keys are nonlinear projections of the state concatenated
    with the context; values are projections of the state alone.  Scores
    are scaled dot products normalized over source turbines, so every
    turbine attends to every turbine.
    """
    d, cols = h.shape
    n = cols // batch
    hc = T.concat([h, context], axis=0)
    q = T.gelu(T.add(T.matmul(p.wq, hc), p.bq))
    k = T.gelu(T.add(T.matmul(p.wk, hc), p.bk))
    v = T.gelu(T.add(T.matmul(p.wv, h), p.bv))

    qh = _split_heads(q, n_heads, head_dim, batch, n, transpose_qk=False)  # (B*K, N, zeta)
    kh = _split_heads(k, n_heads, head_dim, batch, n, transpose_qk=True)   # (B*K, zeta, N)
    vh = _split_heads(v, n_heads, head_dim, batch, n, transpose_qk=False)

    scores = T.mul(T.matmul(qh, kh), 1.0 / math.sqrt(head_dim))  # (B*K, N, N)
    alpha = T.softmax(scores, axis=2)
    out = T.matmul(alpha, vh)  # (B*K, N, zeta)
    return _merge_heads(out, n_heads, head_dim, batch, n)


def attention(h: Tensor, context: Tensor, p: AttentionParams, n_heads: int, head_dim: int) -> Tensor:
    """Single-sample attention: (D, N) state and context to (D, N)."""
    h, context = _as_const(h), _as_const(context)
    d = h.shape[0]
    if d != n_heads * head_dim:
        raise ConfigError(f"hidden width {d} is not n_heads*head_dim = {n_heads}*{head_dim}")
    return _attention(h, context, p, n_heads, head_dim, batch=1)


def _cd_gate(h_a: Tensor, h_b: Tensor, p: GateParams, batch: int, override: float | None) -> Tensor:
    d, cols = h_a.shape
    n = cols // batch
    if override is None:
        pre = T.add(T.matmul(p.mix_a, h_a), T.matmul(p.mix_b, h_b))
        pre = T.reshape(pre, (d, batch, n))
        pre = T.add(pre, T.reshape(p.bias, (d, 1, n)))
        rho = T.sigmoid(T.reshape(pre, (d, cols)))
    else:
        rho = Tensor(np.full((d, cols), float(override), dtype=T.default_dtype()))
    # rho*a + (1-rho)*b computed as b + rho*(a-b): exactly b when a == b and
    # provably inside [min(a,b), max(a,b)] under round-to-nearest
    return T.add(h_b, T.mul(rho, T.sub(h_a, h_b)))


def cd_gate(h_st: Tensor, h_sw: Tensor, p: GateParams, override: float | None = None) -> Tensor:
    """Sigmoid-gated convex blend of the two attention states, elementwise."""
    h_st, h_sw = _as_const(h_st), _as_const(h_sw)
    if h_st.shape != h_sw.shape:
        raise ShapeError(f"gate inputs disagree: {h_st.shape} vs {h_sw.shape}")
    return _cd_gate(h_st, h_sw, p, batch=1, override=override)


def _encoder_layer(h, ctx_modes, ctx_weather, lp: EncoderLayerParams, cfg: ModelConfig,
                   batch: int, training: bool, rng) -> Tensor:
    h_st = _attention(h, ctx_modes, lp.mode_attn, cfg.n_heads, cfg.head_dim, batch)
    h_sw = _attention(h, ctx_weather, lp.weather_attn, cfg.n_heads, cfg.head_dim, batch)
    h_o = _cd_gate(h_st, h_sw, lp.gate, batch, cfg.gate_override)
    a1 = T.layer_norm(T.add(h, h_o), lp.norm1.gain, lp.norm1.bias, axis=0)
    f = mlp_apply(lp.ffn, a1)
    f = T.dropout(f, cfg.dropout, training, rng)
    return T.layer_norm(T.add(a1, f), lp.norm2.gain, lp.norm2.bias, axis=0)


def encoder_layer(h, e_st, e_sw, lp: EncoderLayerParams, cfg: ModelConfig,
                  training: bool = False, rng=None) -> Tensor:
    """One encoder layer on a single sample: (D, N) state plus fused embeddings."""
    h = _as_const(h)
    ctx_m = context_reduce(_as_const(e_st), lp.reduce_modes)
    ctx_w = context_reduce(_as_const(e_sw), lp.reduce_weather)
    return _encoder_layer(h, ctx_m, ctx_w, lp, cfg, 1, training, rng)


def forward_batch(xs, ws, imfs, e_node, params: HiformerParams, cfg: ModelConfig,
                  training: bool = False, rng=None) -> Tensor:
    """Forecast a batch: (B,P,N) power, (B,P,N,C) weather, (B,P,N,M) modes -> (B,Q,N).

    Inputs are expected in normalized units with the mode decomposition
    already applied per window.
    """
    xs, ws, imfs, e_node = map(_as_const, (xs, ws, imfs, e_node))
    b = xs.shape[0]
    p_len, n, c, m, d = cfg.history_len, cfg.n_turbines, cfg.n_weather, cfg.n_modes, cfg.hidden_dim
    if xs.shape[1:] != (p_len, n):
        raise ShapeError(f"power batch shape {xs.shape} != (B, {p_len}, {n})")
    if ws.shape != (b, p_len, n, c):
        raise ShapeError(f"weather batch shape {ws.shape} != ({b}, {p_len}, {n}, {c})")
    if imfs.shape != (b, p_len, n, m):
        raise ShapeError(f"mode batch shape {imfs.shape} != ({b}, {p_len}, {n}, {m})")
    if training and cfg.dropout > 0.0 and rng is None:
        raise ConfigError("training forward with dropout needs an rng")

    e_s = embed_spatial(e_node, params)  # (D, N)
    e_s_bn1 = T.reshape(e_s, (d, 1, n, 1))

    # per-(turbine, mode) and per-(turbine, feature) series embeddings
    imf_cols = T.reshape(T.transpose(imfs, (1, 0, 2, 3)), (p_len, b * n * m))
    e_t = T.reshape(mlp_apply(params.imf_embed, imf_cols), (d, b, n, m))
    e_st = T.add(e_t, e_s_bn1)  # (D, B, N, M)

    w_cols = T.reshape(T.transpose(ws, (1, 0, 2, 3)), (p_len, b * n * c))
    e_w = T.reshape(mlp_apply(params.weather_embed, w_cols), (d, b, n, c))
    e_sw = T.add(e_w, e_s_bn1)  # (D, B, N, C)

    x_cols = T.reshape(T.transpose(xs, (1, 0, 2)), (p_len, b * n))
    h = mlp_apply(params.input_embed, x_cols)  # (D, B*N)
    h = T.reshape(T.add(T.reshape(h, (d, b, n)), T.reshape(e_s, (d, 1, n))), (d, b * n))

    for lp in params.layers:
        ctx_m = _batched_reduce(e_st, lp.reduce_modes, d, b, n)
        ctx_w = _batched_reduce(e_sw, lp.reduce_weather, d, b, n)
        h = _encoder_layer(h, ctx_m, ctx_w, lp, cfg, b, training, rng)

    out = _project(params.projection, h)  # (Q, B*N)
    return T.transpose(T.reshape(out, (cfg.horizon, b, n)), (1, 0, 2))


def _batched_reduce(e: Tensor, logits: Tensor, d: int, b: int, n: int) -> Tensor:
    s = e.shape[-1]
    weights = T.softmax(logits, axis=0)
    flat = T.reshape(e, (d * b * n, s))
    return T.reshape(T.matmul(flat, weights), (d, b * n))


def forward(x, w, e_imf, e_node, params: HiformerParams, cfg: ModelConfig,
            training: bool = False, rng=None) -> Tensor:
    """Single-sample forecast: (P,N) power, (P,N,C) weather, (P,N,M) modes -> (Q,N)."""
    x, w, e_imf = map(_as_const, (x, w, e_imf))
    xs = T.reshape(x, (1,) + x.shape)
    ws = T.reshape(w, (1,) + w.shape)
    imfs = T.reshape(e_imf, (1,) + e_imf.shape)
    out = forward_batch(xs, ws, imfs, e_node, params, cfg, training=training, rng=rng)
    return T.reshape(out, (cfg.horizon, cfg.n_turbines))


def save_checkpoint(path, params: HiformerParams, cfg: ModelConfig,
                    extras: dict[str, np.ndarray] | None = None,
                    meta: dict | None = None) -> None:
    """Write a versioned checkpoint: parameter blobs + JSON manifest, atomically."""
    payload = {f"param/{k}": v for k, v in params.state_arrays().items()}
    for k, v in (extras or {}).items():
        payload[f"extra/{k}"] = np.asarray(v)
    manifest = {"version": CHECKPOINT_VERSION, "model": cfg.to_dict(), "meta": meta or {}}
    payload["manifest"] = np.frombuffer(json.dumps(manifest).encode(), dtype=np.uint8)
    with atomic_path(path) as tmp:
        with open(tmp, "wb") as fh:
            np.savez(fh, **payload)


def load_checkpoint(path):
    """Read a checkpoint; returns (params, cfg, extras, meta)."""
    try:
        bundle = np.load(path)
    except FileNotFoundError:
        raise ConfigError(f"checkpoint not found: {path}") from None
    except (ValueError, OSError) as exc:
        raise ConfigError(f"unreadable checkpoint {path}: {exc}") from None
    if "manifest" not in bundle:
        raise ConfigError(f"checkpoint {path} has no manifest")
    manifest = json.loads(bundle["manifest"].tobytes().decode())
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(
            f"checkpoint version {manifest.get('version')} unsupported (expected {CHECKPOINT_VERSION})"
        )
    cfg = ModelConfig.from_dict(manifest["model"])
    params = init_params(cfg, seed=0)
    arrays = {k[len("param/"):]: bundle[k] for k in bundle.files if k.startswith("param/")}
    params.load_state_arrays(arrays)
    extras = {k[len("extra/"):]: bundle[k] for k in bundle.files if k.startswith("extra/")}
    return params, cfg, extras, manifest.get("meta", {})
