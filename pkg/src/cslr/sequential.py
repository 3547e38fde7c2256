"""Local transformer sequential module: depth-wise temporal convolution,
local self-attention with a shared Gaussian bias, and a feed-forward
network, each wrapped in a residual connection. Also hosts the gloss
classification head.

Layer normalization is applied pre-sublayer inside the attention and FFN
sublayers; the temporal-conv residual is taken on the raw input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from cslr import autodiff as ad
from cslr.autodiff import Tensor

LN_EPS = 1e-5


@dataclass
class LTConfig:
    layers: int = 2
    model_dim: int = 64
    heads: int = 4
    dtcn_kernel: int = 5
    window: float = 6.0  # Gaussian-bias window D

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by {self.heads} heads")
        if self.dtcn_kernel % 2 == 0:
            raise ValueError("dtcn_kernel must be odd")


def compute_window_d(lengths: Sequence[tuple[int, int]]) -> float:
    """Average frames-per-gloss ratio over (T_i, N_i) training pairs."""
    if not lengths:
        raise ValueError("window size needs at least one training pair")
    total = 0.0
    for t, n in lengths:
        if n < 1:
            raise ValueError("gloss count must be positive")
        total += t / n
    return total / len(lengths)


# frames-per-gloss ratios the window-size rule yields on the full corpora
# (documentation constants; not reproducible at desk scale)
CORPUS_WINDOWS = {"phoenix": 6.3, "csl": 15.8, "csl-daily": 5.0}


def gaussian_bias(t_len: int, window: float) -> np.ndarray:
    """Additive attention bias -((j-i)^2)/(2*sigma^2), sigma = window/2.

    Shared across heads; zero diagonal, symmetric, nonpositive.
    """
    if t_len < 1 or window <= 0:
        raise ValueError("need t_len >= 1 and window > 0")
    idx = np.arange(t_len, dtype=np.float64)
    delta = idx[None, :] - idx[:, None]
    sigma = window / 2.0
    return -(delta ** 2) / (2.0 * sigma ** 2)


def _linear_init(rng, din, dout) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(1.0 / din), size=(din, dout))


def init_attention_params(d: int, rng: np.random.Generator) -> dict[str, Tensor]:
    p = {}
    for name in ("wq", "wk", "wv", "wo"):
        p[name] = Tensor(_linear_init(rng, d, d), requires_grad=True)
    for name in ("bq", "bk", "bv", "bo"):
        p[name] = Tensor(np.zeros(d), requires_grad=True)
    return p


def init_ffn_params(d: int, hidden: int, rng: np.random.Generator) -> dict[str, Tensor]:
    return {
        "w1": Tensor(_linear_init(rng, d, hidden), requires_grad=True),
        "b1": Tensor(np.zeros(hidden), requires_grad=True),
        "w2": Tensor(_linear_init(rng, hidden, d), requires_grad=True),
        "b2": Tensor(np.zeros(d), requires_grad=True),
    }


def init_ln_params(d: int) -> dict[str, Tensor]:
    return {
        "g": Tensor(np.ones(d), requires_grad=True),
        "b": Tensor(np.zeros(d), requires_grad=True),
    }


def init_lt_params(config: LTConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    d = config.model_dim
    params: dict[str, Tensor] = {}
    for l in range(config.layers):
        params[f"lt{l}.dtcn.w"] = Tensor(
            rng.normal(0.0, np.sqrt(1.0 / config.dtcn_kernel), size=(d, config.dtcn_kernel)),
            requires_grad=True,
        )
        for k, v in init_ln_params(d).items():
            params[f"lt{l}.ln1.{k}"] = v
        for k, v in init_attention_params(d, rng).items():
            params[f"lt{l}.attn.{k}"] = v
        for k, v in init_ln_params(d).items():
            params[f"lt{l}.ln2.{k}"] = v
        for k, v in init_ffn_params(d, 4 * d, rng).items():
            params[f"lt{l}.ffn.{k}"] = v
    return params


def affine_layer_norm(x: Tensor, g: Tensor, b: Tensor) -> Tensor:
    return ad.add(ad.mul(ad.layer_norm(x, eps=LN_EPS), g), b)


def multi_head_attention(x: Tensor, p: dict[str, Tensor], n_heads: int,
                         bias: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product self-attention over (T,d) with optional additive bias."""
    t, d = x.shape
    dh = d // n_heads

    def split(h: Tensor) -> Tensor:
        return ad.transpose(ad.reshape(h, (t, n_heads, dh)), (1, 0, 2))

    q = split(ad.add(ad.matmul(x, p["wq"]), p["bq"]))
    k = split(ad.add(ad.matmul(x, p["wk"]), p["bk"]))
    v = split(ad.add(ad.matmul(x, p["wv"]), p["bv"]))

    att = ad.scalar_mul(ad.matmul(q, ad.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(dh))
    if bias is not None:
        att = ad.add(att, Tensor(bias[None, :, :]))
    weights = ad.softmax(att, axis=-1)
    ctx = ad.matmul(weights, v)                       # (heads, T, dh)
    merged = ad.reshape(ad.transpose(ctx, (1, 0, 2)), (t, d))
    return ad.add(ad.matmul(merged, p["wo"]), p["bo"])


def local_self_attention(x: Tensor, p: dict[str, Tensor], n_heads: int,
                         gb: np.ndarray) -> Tensor:
    return multi_head_attention(x, p, n_heads, bias=gb)


def feed_forward(x: Tensor, p: dict[str, Tensor]) -> Tensor:
    h = ad.relu(ad.add(ad.matmul(x, p["w1"]), p["b1"]))
    return ad.add(ad.matmul(h, p["w2"]), p["b2"])


def _sub(params: dict[str, Tensor], prefix: str) -> dict[str, Tensor]:
    plen = len(prefix)
    return {k[plen:]: v for k, v in params.items() if k.startswith(prefix)}


def lt_layer_forward(x: Tensor, params: dict[str, Tensor], layer: int,
                     config: LTConfig, gb: np.ndarray) -> Tensor:
    pre = f"lt{layer}."
    x1 = ad.add(x, ad.depthwise_conv1d(x, params[pre + "dtcn.w"]))
    n1 = affine_layer_norm(x1, params[pre + "ln1.g"], params[pre + "ln1.b"])
    x2 = ad.add(x1, local_self_attention(n1, _sub(params, pre + "attn."), config.heads, gb))
    n2 = affine_layer_norm(x2, params[pre + "ln2.g"], params[pre + "ln2.b"])
    return ad.add(x2, feed_forward(n2, _sub(params, pre + "ffn.")))


def sequential_forward(v: Tensor, params: dict[str, Tensor], config: LTConfig) -> Tensor:
    """Stack of LT layers mapping (T,d) visual to (T,d) sequential features."""
    x = v
    if config.layers:
        gb = gaussian_bias(v.shape[0], config.window)
        for l in range(config.layers):
            x = lt_layer_forward(x, params, l, config, gb)
    return x


@dataclass
class GlossHead:
    """Affine projection d -> |V|+1 gloss logits; blank is column 0."""

    w: Tensor
    b: Tensor

    @staticmethod
    def init(d: int, vocab_size: int, rng: np.random.Generator) -> "GlossHead":
        return GlossHead(
            w=Tensor(_linear_init(rng, d, vocab_size + 1), requires_grad=True),
            b=Tensor(np.zeros(vocab_size + 1), requires_grad=True),
        )

    def params(self) -> dict[str, Tensor]:
        return {"head.w": self.w, "head.b": self.b}


def gloss_logits(s: Tensor, head: GlossHead) -> Tensor:
    return ad.add(ad.matmul(s, head.w), head.b)
