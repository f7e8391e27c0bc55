"""The classifier network: spectral encoder-decoder, spatial-pooling
tokenization, global token, multi-head attention with residual, feature
head and classifier — plus the ablation switches that disable MPCA, the
encoder-decoder, or the learnable global token.

All forward functions accept batched (N, ...) tensors; the single-sample
forms (P, P, C) / (5, C) are lifted to a batch of one and squeezed back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from . import hsz, ops
from .errors import CompatibilityError, ConfigError, DimensionError
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyper-parameters and ablation switches.

    Channel widths: the 3-D encoder expands each input channel by
    ``encoder_kernels``, the first 2-D conv squeezes to
    ``squeeze_channels``, the second expands to ``token_channels`` (the
    token length). The widths must form a U-shape: expanded > squeezed <
    token width.
    """

    patch_size: int = 5
    num_views: int = 10
    view_components: int = 3
    encoder_kernels: int = 8
    squeeze_channels: int = 40
    token_channels: int = 64
    num_heads: int = 8
    feature_dim: int = 64
    num_classes: int = 16
    use_mpca: bool = True
    use_sed: bool = True
    use_global_token: bool = True

    def __post_init__(self):
        for name in ("patch_size", "num_views", "view_components", "encoder_kernels",
                     "squeeze_channels", "token_channels", "num_heads", "feature_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.patch_size % 2 == 0:
            raise ConfigError(f"patch_size must be odd, got {self.patch_size}")
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")
        if self.token_channels % self.num_heads != 0:
            raise ConfigError(
                f"token_channels {self.token_channels} not divisible by "
                f"num_heads {self.num_heads}")
        if self.use_sed:
            expanded = self.encoder_kernels * self.input_channels
            if not (expanded > self.squeeze_channels and
                    self.token_channels > self.squeeze_channels):
                raise ConfigError(
                    f"channel widths must form a U-shape: expanded {expanded} and "
                    f"token width {self.token_channels} must both exceed the squeeze "
                    f"width {self.squeeze_channels}")

    @property
    def input_channels(self) -> int:
        return self.num_views * self.view_components

    @property
    def head_dim(self) -> int:
        return self.token_channels // self.num_heads

    def to_json_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**doc)


class ModelParams:
    """All trainable arrays, in a fixed canonical order.

    ``named_parameters`` drives initialization, checkpoint layout and the
    optimizer state, so its order must never change between versions.
    ``global_token`` is always stored but trains only when
    ``use_global_token`` is set.
    """

    def __init__(self, config: ModelConfig, tensors: dict):
        self.config = config
        self._tensors = tensors
        for name, shape in self.expected_shapes(config).items():
            if name not in tensors:
                raise ConfigError(f"missing parameter {name!r}")
            if tensors[name].data.shape != shape:
                raise CompatibilityError(
                    f"parameter {name!r} has shape {tensors[name].data.shape}, "
                    f"config implies {shape}")
        extra = set(tensors) - set(self.expected_shapes(config))
        if extra:
            raise ConfigError(f"unexpected parameters: {sorted(extra)}")

    @staticmethod
    def expected_shapes(config: ModelConfig) -> dict:
        """name -> array shape, in canonical order."""
        c_in = config.input_channels
        k3 = config.token_channels
        shapes = {}
        if config.use_sed:
            shapes["sed.conv3.kernels"] = (config.encoder_kernels, 3, 3, 3)
            shapes["sed.conv3.bias"] = (config.encoder_kernels,)
            shapes["sed.conv2a.kernels"] = (config.squeeze_channels, 3, 3,
                                            config.encoder_kernels * c_in)
            shapes["sed.conv2a.bias"] = (config.squeeze_channels,)
            shapes["sed.conv2b.kernels"] = (k3, 3, 3, config.squeeze_channels)
            shapes["sed.conv2b.bias"] = (k3,)
        else:
            shapes["sed.flat.kernels"] = (k3, 3, 3, c_in)
            shapes["sed.flat.bias"] = (k3,)
        shapes["global_token"] = (k3,)
        for h in range(config.num_heads):
            for proj in ("wq", "wk", "wv"):
                shapes[f"attn.head{h}.{proj}"] = (k3, config.head_dim)
        shapes["feature.weight"] = (5 * k3, config.feature_dim)
        shapes["feature.bias"] = (config.feature_dim,)
        shapes["classifier.weight"] = (config.feature_dim, config.num_classes)
        shapes["classifier.bias"] = (config.num_classes,)
        return shapes

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int, dtype=np.float32) -> "ModelParams":
        """Glorot-uniform weights, zero biases, Gaussian(0, 0.02) global token."""
        rng = np.random.default_rng(seed)
        tensors = {}
        for name, shape in cls.expected_shapes(config).items():
            if name == "global_token":
                arr = rng.normal(0.0, 0.02, size=shape)
            elif name.endswith(".bias"):
                arr = np.zeros(shape)
            elif name.endswith(".kernels"):
                fan_in = int(np.prod(shape[1:]))
                if "conv3" in name:  # single-channel 3-D kernel
                    fan_out = shape[0] * fan_in
                else:  # 2-D kernel: receptive field excludes the channel depth
                    fan_out = shape[0] * shape[1] * shape[2]
                bound = math.sqrt(6.0 / (fan_in + fan_out))
                arr = rng.uniform(-bound, bound, size=shape)
            else:  # affine / projection weights (n_in, n_out)
                bound = math.sqrt(6.0 / (shape[0] + shape[1]))
                arr = rng.uniform(-bound, bound, size=shape)
            tensors[name] = Tensor(arr.astype(dtype), requires_grad=True)
        return cls(config, tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def named_parameters(self):
        """All (name, Tensor) pairs in canonical order."""
        return [(n, self._tensors[n]) for n in self.expected_shapes(self.config)]

    def trainable_parameters(self):
        """Canonical order, minus the global token when its ablation is off."""
        out = []
        for name, t in self.named_parameters():
            if name == "global_token" and not self.config.use_global_token:
                continue
            out.append((name, t))
        return out

    def zero_grads(self):
        for _, t in self.named_parameters():
            t.zero_grad()

    def copy(self) -> "ModelParams":
        tensors = {n: Tensor(t.data.copy(), requires_grad=t.requires_grad)
                   for n, t in self.named_parameters()}
        return ModelParams(self.config, tensors)

    def load_values(self, other: "ModelParams"):
        """Overwrite this model's arrays with another's (shapes must match)."""
        for (_, mine), (_, theirs) in zip(self.named_parameters(), other.named_parameters()):
            mine.data[...] = theirs.data


def save_params(path, params: ModelParams):
    """Write a checkpoint: JSON config header + arrays as f32le, canonical order."""
    names = list(ModelParams.expected_shapes(params.config))
    header = {
        "format_version": 1,
        "config": params.config.to_json_dict(),
        "arrays": [{"name": n, "shape": list(params[n].data.shape)} for n in names],
        "dtype": "f32le",
    }
    payload = b"".join(np.ascontiguousarray(params[n].data, dtype="<f4").tobytes()
                       for n in names)
    hsz.write_framed(path, hsz.MODEL_MAGIC, header, payload)


def load_params(path) -> ModelParams:
    """Read a checkpoint written by :func:`save_params`."""
    header, payload = hsz.read_framed(path, hsz.MODEL_MAGIC)
    if header.get("dtype") != "f32le":
        raise CompatibilityError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    config = ModelConfig.from_json_dict(header.get("config", {}))
    expected = ModelParams.expected_shapes(config)
    manifest = header.get("arrays", [])
    if [e["name"] for e in manifest] != list(expected):
        raise CompatibilityError(f"{path}: checkpoint arrays do not match its config")
    total = sum(int(np.prod(e["shape"])) for e in manifest) * 4
    if len(payload) != total:
        raise CompatibilityError(
            f"{path}: payload is {len(payload)} bytes, manifest implies {total}")
    tensors = {}
    offset = 0
    for entry in manifest:
        shape = tuple(int(s) for s in entry["shape"])
        n_bytes = int(np.prod(shape)) * 4
        arr = np.frombuffer(payload[offset:offset + n_bytes], dtype="<f4").reshape(shape)
        tensors[entry["name"]] = Tensor(arr.copy(), requires_grad=True)
        offset += n_bytes
    return ModelParams(config, tensors)


@dataclass
class TokenSet:
    """Rows (..., 5, C): row 0 the global token, rows 1-4 the quadrant tokens."""

    rows: Tensor

    def __post_init__(self):
        if self.rows.data.shape[-2] != 5:
            raise DimensionError(f"a TokenSet has 5 rows, got shape {self.rows.data.shape}")


def sed_forward(patch: Tensor, params: ModelParams, trace: dict = None) -> Tensor:
    """Spectral encoder-decoder: expand (3-D conv) / squeeze / re-expand.

    (N, P, P, C_in) -> (N, P, P, token_channels), spatial size preserved at
    every stage. Under the encoder-decoder ablation a single 3x3 conv maps
    straight to the token width instead.
    """
    config = params.config
    expect = config.input_channels
    if patch.data.shape[-1] != expect:
        raise DimensionError(
            f"patch has {patch.data.shape[-1]} channels, config implies {expect}")
    if patch.data.shape[-2] != config.patch_size or patch.data.shape[-3] != config.patch_size:
        raise DimensionError(
            f"patch spatial extent {patch.data.shape[-3:-1]} does not match "
            f"patch_size {config.patch_size}")
    if config.use_sed:
        expanded = ops.relu(ops.conv3d(patch, params["sed.conv3.kernels"],
                                       params["sed.conv3.bias"]))
        squeezed = ops.relu(ops.conv2d(expanded, params["sed.conv2a.kernels"],
                                       params["sed.conv2a.bias"]))
        decoded = ops.relu(ops.conv2d(squeezed, params["sed.conv2b.kernels"],
                                      params["sed.conv2b.bias"]))
        if trace is not None:
            trace["sed.expanded"] = expanded.data.shape
            trace["sed.squeezed"] = squeezed.data.shape
            trace["sed.decoded"] = decoded.data.shape
        return decoded
    decoded = ops.relu(ops.conv2d(patch, params["sed.flat.kernels"],
                                  params["sed.flat.bias"]))
    if trace is not None:
        trace["sed.decoded"] = decoded.data.shape
    return decoded


def quadrant_bounds(patch_size: int):
    """(row range, col range) of the four center-overlapping quadrants.

    Order: top-left, top-right, bottom-left, bottom-right; every quadrant is
    ceil(P/2) square and contains the center pixel (c, c), c = P // 2.
    """
    if patch_size % 2 == 0:
        raise ConfigError(f"patch size must be odd, got {patch_size}")
    c = patch_size // 2
    lo, hi = (0, c + 1), (c, patch_size)
    return [(lo, lo), (lo, hi), (hi, lo), (hi, hi)]


def tokenize(feature: Tensor):
    """Mean-pool each quadrant per channel: (N, P, P, C) -> 4 tokens (N, C).

    A (P, P, C) input yields 4 tokens of shape (C,).
    """
    single = feature.data.ndim == 3
    if single:
        feature = ops.reshape(feature, (1,) + feature.data.shape)
    if feature.data.ndim != 4:
        raise DimensionError(f"feature must be (N,P,P,C), got {feature.data.shape}")
    p = feature.data.shape[1]
    if feature.data.shape[2] != p:
        raise DimensionError(f"feature spatial extent must be square, got {feature.data.shape}")
    tokens = [ops.box_mean(feature, rows, cols) for rows, cols in quadrant_bounds(p)]
    if single:
        tokens = [ops.reshape(t, (t.data.shape[1],)) for t in tokens]
    return tokens


def assemble_tokens(tokens, params: ModelParams, use_global_token: bool) -> TokenSet:
    """Prepend the global token (or a zero row under its ablation).

    No positional encoding is added anywhere. 4 tokens (N, C) -> rows
    (N, 5, C); 4 tokens (C,) -> rows (5, C).
    """
    if len(tokens) != 4:
        raise DimensionError(f"expected 4 quadrant tokens, got {len(tokens)}")
    single = tokens[0].data.ndim == 1
    if single:
        tokens = [ops.reshape(t, (1, t.data.shape[0])) for t in tokens]
    n, c = tokens[0].data.shape
    if use_global_token:
        head_row = ops.tile_vector(params["global_token"], n)
    else:
        head_row = Tensor(np.zeros((n, 1, c), dtype=tokens[0].data.dtype))
    rows = ops.concat([head_row] + [ops.reshape(t, (n, 1, c)) for t in tokens], axis=1)
    if single:
        rows = ops.reshape(rows, (5, c))
    return TokenSet(rows=rows)


def attention_head(tokens: Tensor, wq: Tensor, wk: Tensor, wv: Tensor) -> Tensor:
    """Scaled dot-product self-attention: softmax(Q K^T / sqrt(d)) V."""
    d = wq.data.shape[1]
    q = ops.matmul(tokens, wq)
    k = ops.matmul(tokens, wk)
    v = ops.matmul(tokens, wv)
    logits = ops.scale(ops.matmul(q, k, transpose_b=True), 1.0 / math.sqrt(d))
    return ops.matmul(ops.softmax_rows(logits), v)


def multi_head(tokens, params: ModelParams) -> Tensor:
    """Concatenate per-head attention outputs and add the residual.

    TA = concat_h(head_h(Tokens)) + Tokens, same shape as the token rows.
    """
    rows = tokens.rows if isinstance(tokens, TokenSet) else tokens
    config = params.config
    if config.num_heads * config.head_dim != config.token_channels:
        raise ConfigError("head_dim * num_heads must equal token_channels")
    outs = [attention_head(rows, params[f"attn.head{h}.wq"], params[f"attn.head{h}.wk"],
                           params[f"attn.head{h}.wv"])
            for h in range(config.num_heads)]
    mixed = ops.concat(outs, axis=-1)
    return ops.add(mixed, rows)


def feature_and_classify(ta: Tensor, params: ModelParams):
    """Flatten the 5 attended tokens, fuse to the feature vector, classify.

    (N, 5, C) -> logits (N, K) and features (N, feature_dim); a (5, C)
    input yields (K,) and (feature_dim,). Class probabilities are
    softmax(logits); the predicted class is the lowest-index argmax.
    """
    single = ta.data.ndim == 2
    if single:
        ta = ops.reshape(ta, (1,) + ta.data.shape)
    n = ta.data.shape[0]
    flat = ops.reshape(ta, (n, ta.data.shape[1] * ta.data.shape[2]))
    fea = ops.affine(flat, params["feature.weight"], params["feature.bias"])
    logits = ops.affine(fea, params["classifier.weight"], params["classifier.bias"])
    if single:
        logits = ops.reshape(logits, (logits.data.shape[1],))
        fea = ops.reshape(fea, (fea.data.shape[1],))
    return logits, fea


def predict(logits: np.ndarray) -> np.ndarray:
    """1-based class ids from (N, K) logits; ties go to the lowest index."""
    return np.argmax(logits, axis=-1) + 1


def forward(patch, params: ModelParams, trace: dict = None) -> Tensor:
    """Full composition: encoder-decoder -> tokenize -> attention -> classify."""
    x = patch if isinstance(patch, Tensor) else Tensor(patch)
    feature = sed_forward(x, params, trace=trace)
    tokens = assemble_tokens(tokenize(feature), params, params.config.use_global_token)
    ta = multi_head(tokens, params)
    logits, fea = feature_and_classify(ta, params)
    if trace is not None:
        trace["tokens"] = tokens.rows.data.shape
        trace["attended"] = ta.data.shape
        trace["features"] = fea.data.shape
        trace["logits"] = logits.data.shape
    return logits
