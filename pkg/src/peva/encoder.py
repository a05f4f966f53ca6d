"""Trainable view-sequence aggregator: a CLS token plus one pre-norm
transformer block (LayerNorm -> multi-head attention -> residual, then
LayerNorm -> MLP -> residual). The CLS-position output row is the few-shot
shape descriptor. No positional embeddings: the views are an unordered set,
and attention over them is permutation-invariant.

``encode`` handles one shape; ``encode_batch`` stacks several shapes'
token rows into one matrix so the projections run as single matrix products,
with attention kept segment-local. Both paths share the block code and the
same kernels.
"""

from __future__ import annotations

import numpy as np

from dataclasses import dataclass

from . import tensor as T
from .errors import ConfigError, DataError, DimensionError
from .rng import Stream, derive_seed
from .store import ParamBundle, read_container, write_container

INIT_STD = 0.02


@dataclass
class EncoderConfig:
    dim: int
    proj_width: int = 1024
    heads: int = 4
    mlp_hidden: int = 512
    layers: int = 1
    use_positional_embedding: bool = False
    eps: float = 1e-5

    def validate(self) -> None:
        if self.dim < 1 or self.proj_width < 1 or self.mlp_hidden < 1:
            raise ConfigError("encoder dimensions must be positive")
        if self.layers < 1:
            raise ConfigError("encoder needs at least one block")
        if self.proj_width % self.heads != 0:
            raise ConfigError(
                f"head count {self.heads} must divide projection width {self.proj_width}")
        if self.use_positional_embedding:
            raise ConfigError("positional embeddings are not supported")

    @property
    def head_dim(self) -> int:
        return self.proj_width // self.heads


class EncoderParams:
    """All trainable tensors of the aggregator, keyed by stable names."""

    def __init__(self, config: EncoderConfig, tensors: dict[str, T.Tensor]):
        self.config = config
        self.tensors = tensors

    @classmethod
    def init(cls, config: EncoderConfig, seed: int) -> "EncoderParams":
        """Truncated-normal(0.02) projections and CLS token, zero biases,
        unit layer-norm gains. The draw order is fixed by construction order,
        so a seed pins every parameter."""
        config.validate()
        stream = Stream(derive_seed(seed, "encoder-init"))
        d, p, h = config.dim, config.proj_width, config.mlp_hidden

        def trunc(shape: tuple[int, ...]) -> T.Tensor:
            n = int(np.prod(shape))
            return T.Tensor(stream.truncated_normals(n, std=INIT_STD).reshape(shape),
                            requires_grad=True)

        def zeros(shape: tuple[int, ...]) -> T.Tensor:
            return T.Tensor(np.zeros(shape), requires_grad=True)

        def ones(shape: tuple[int, ...]) -> T.Tensor:
            return T.Tensor(np.ones(shape), requires_grad=True)

        tensors: dict[str, T.Tensor] = {"cls_token": trunc((d,))}
        for i in range(config.layers):
            pre = f"block{i}."
            tensors[pre + "ln1.gamma"] = ones((d,))
            tensors[pre + "ln1.beta"] = zeros((d,))
            tensors[pre + "attn.w_q"] = trunc((d, p))
            tensors[pre + "attn.b_q"] = zeros((p,))
            tensors[pre + "attn.w_k"] = trunc((d, p))
            tensors[pre + "attn.b_k"] = zeros((p,))
            tensors[pre + "attn.w_v"] = trunc((d, p))
            tensors[pre + "attn.b_v"] = zeros((p,))
            tensors[pre + "attn.w_o"] = trunc((p, d))
            tensors[pre + "attn.b_o"] = zeros((d,))
            tensors[pre + "ln2.gamma"] = ones((d,))
            tensors[pre + "ln2.beta"] = zeros((d,))
            tensors[pre + "mlp.w1"] = trunc((d, h))
            tensors[pre + "mlp.b1"] = zeros((h,))
            tensors[pre + "mlp.w2"] = trunc((h, d))
            tensors[pre + "mlp.b2"] = zeros((d,))
        return cls(config, tensors)

    def __getitem__(self, name: str) -> T.Tensor:
        return self.tensors[name]

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def assert_finite(self) -> None:
        for name, t in self.tensors.items():
            if not np.isfinite(t.data).all():
                from .errors import NumericError
                raise NumericError(f"parameter {name!r} contains non-finite values")

    def save(self, path) -> None:
        arrays = {name: t.data for name, t in self.tensors.items()}
        arrays["meta.heads"] = np.array([float(self.config.heads)])
        arrays["meta.layers"] = np.array([float(self.config.layers)])
        write_container(ParamBundle(arrays, dim=self.config.dim, backbone_tag="encoder"), path)

    @classmethod
    def load(cls, path) -> "EncoderParams":
        bundle = read_container(path)
        if not isinstance(bundle, ParamBundle):
            raise DataError(f"{path}: not a parameter checkpoint")
        arrays = dict(bundle.tensors)
        try:
            heads = int(arrays.pop("meta.heads")[0])
            layers = int(arrays.pop("meta.layers")[0])
            cfg = EncoderConfig(
                dim=int(arrays["cls_token"].shape[0]),
                proj_width=int(arrays["block0.attn.w_q"].shape[1]),
                heads=heads,
                mlp_hidden=int(arrays["block0.mlp.w1"].shape[1]),
                layers=layers,
            )
        except KeyError as exc:
            raise DataError(f"{path}: checkpoint misses tensor {exc}") from exc
        cfg.validate()
        return cls(cfg, {name: T.Tensor(arr, requires_grad=True)
                         for name, arr in arrays.items()})


def attention(x: T.Tensor, params: EncoderParams, block: int = 0,
              bounds: np.ndarray | None = None) -> T.Tensor:
    """Multi-head self-attention module, (T, D) -> (T, D): project to Q/K/V,
    attend per head within each row segment, concatenate, project back."""
    pre = f"block{block}.attn."
    if bounds is None:
        bounds = np.array([0, x.data.shape[0]], dtype=np.int64)
    q = T.add(T.matmul(x, params[pre + "w_q"]), params[pre + "b_q"])
    k = T.add(T.matmul(x, params[pre + "w_k"]), params[pre + "b_k"])
    v = T.add(T.matmul(x, params[pre + "w_v"]), params[pre + "b_v"])
    merged = T.multihead_attention(q, k, v, bounds, params.config.heads)
    return T.add(T.matmul(merged, params[pre + "w_o"]), params[pre + "b_o"])


def _apply_blocks(x: T.Tensor, bounds: np.ndarray, params: EncoderParams) -> T.Tensor:
    cfg = params.config
    for i in range(cfg.layers):
        pre = f"block{i}."
        normed = T.layer_norm(x, params[pre + "ln1.gamma"], params[pre + "ln1.beta"], cfg.eps)
        x = T.add(x, attention(normed, params, block=i, bounds=bounds))
        normed = T.layer_norm(x, params[pre + "ln2.gamma"], params[pre + "ln2.beta"], cfg.eps)
        hidden = T.gelu(T.add(T.matmul(normed, params[pre + "mlp.w1"]), params[pre + "mlp.b1"]))
        x = T.add(x, T.add(T.matmul(hidden, params[pre + "mlp.w2"]), params[pre + "mlp.b2"]))
    return x


def _check_views(views: np.ndarray, dim: int) -> np.ndarray:
    views = np.asarray(views, dtype=np.float64)
    if views.ndim != 2 or views.shape[0] < 1 or views.shape[1] != dim:
        raise DimensionError(f"views {views.shape} do not match encoder dim {dim}")
    return views


def encode(views: np.ndarray, params: EncoderParams) -> T.Tensor:
    """Aggregate one shape's (M, D) view features into the (D,) descriptor."""
    views = _check_views(views, params.config.dim)
    x = T.prepend_row(params["cls_token"], T.constant(views))
    bounds = np.array([0, views.shape[0] + 1], dtype=np.int64)
    return T.take_row(_apply_blocks(x, bounds, params), 0)


def encode_batch(views_list: list[np.ndarray], params: EncoderParams) -> T.Tensor:
    """Descriptors for several shapes at once, as a (B, D) tensor."""
    mats = [_check_views(v, params.config.dim) for v in views_list]
    x, bounds = T.stack_with_prefix(params["cls_token"], mats)
    out = _apply_blocks(x, bounds, params)
    return T.take_rows(out, bounds[:-1])
