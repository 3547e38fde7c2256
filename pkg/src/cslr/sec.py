"""Sentence embedding consistency: a shared lightweight extractor applied
to both visual and sequential features, cyclic in-batch negative
sampling, and a cosine-distance triplet loss.

The extractor prepends a learnable sentence token, adds positional
embeddings, models local context with a depth-wise temporal conv, then a
transformer encoder layer; the output at the token position is the
sentence embedding. One extractor instance serves both feature streams.
"""

from __future__ import annotations

import numpy as np

from cslr import autodiff as ad
from cslr.autodiff import Tensor
from cslr.sequential import (
    LN_EPS,
    _sub,
    affine_layer_norm,
    feed_forward,
    init_attention_params,
    init_ffn_params,
    init_ln_params,
    multi_head_attention,
)

DEFAULT_MARGIN = 2.0
SEE_LR_SCALE = 0.1
_NORM_FLOOR = 1e-30


def init_see_params(d: int, t_max: int, dtcn_kernel: int,
                    rng: np.random.Generator) -> dict[str, Tensor]:
    """Parameters for the extractor; the positional table has t_max+1 rows."""
    params: dict[str, Tensor] = {
        "sen": Tensor(rng.normal(0.0, 0.02, size=(1, d)), requires_grad=True),
        "pos": Tensor(rng.normal(0.0, 0.02, size=(t_max + 1, d)), requires_grad=True),
        "dtcn.w": Tensor(
            rng.normal(0.0, np.sqrt(1.0 / dtcn_kernel), size=(d, dtcn_kernel)),
            requires_grad=True,
        ),
    }
    for k, v in init_ln_params(d).items():
        params[f"ln1.{k}"] = v
    for k, v in init_attention_params(d, rng).items():
        params[f"attn.{k}"] = v
    for k, v in init_ln_params(d).items():
        params[f"ln2.{k}"] = v
    for k, v in init_ffn_params(d, 4 * d, rng).items():
        params[f"ffn.{k}"] = v
    return params


def see_forward(features: Tensor, params: dict[str, Tensor], n_heads: int = 4) -> Tensor:
    """Map a (T,d) feature sequence to its d-dimensional sentence embedding."""
    t, d = features.shape
    if t < 1:
        raise ValueError("need at least one frame")
    if t + 1 > params["pos"].shape[0]:
        raise ValueError(
            f"sequence length {t} exceeds positional table ({params['pos'].shape[0] - 1})"
        )
    s1 = ad.concat([params["sen"], features], axis=0)
    s2 = ad.add(s1, ad.take(params["pos"], slice(0, t + 1)))
    s3 = ad.add(s2, ad.depthwise_conv1d(s2, params["dtcn.w"]))

    n1 = affine_layer_norm(s3, params["ln1.g"], params["ln1.b"])
    s4 = ad.add(s3, multi_head_attention(n1, _sub(params, "attn."), n_heads))
    n2 = affine_layer_norm(s4, params["ln2.g"], params["ln2.b"])
    s5 = ad.add(s4, feed_forward(n2, _sub(params, "ffn.")))
    return ad.reshape(ad.take(s5, slice(0, 1)), (d,))


def negative_indices(batch_size: int) -> list[int]:
    """Fixed-point-free negative assignment: swap at B=2, cyclic shift beyond."""
    if batch_size < 2:
        raise ValueError("no negative available: batch size must be >= 2")
    return [(i + 1) % batch_size for i in range(batch_size)]


def cosine_distance(x1: Tensor, x2: Tensor) -> Tensor:
    """1 - cos(x1, x2), in [0, 2]; raises on (numerically) zero vectors."""
    x1, x2 = ad.as_tensor(x1), ad.as_tensor(x2)
    n1 = float(np.linalg.norm(x1.data))
    n2 = float(np.linalg.norm(x2.data))
    if n1 < _NORM_FLOOR or n2 < _NORM_FLOOR:
        raise ValueError("cosine distance is undefined for a zero vector")
    dot = ad.reduce_sum(ad.mul(x1, x2))
    norm1 = ad.sqrt(ad.reduce_sum(ad.mul(x1, x1)))
    norm2 = ad.sqrt(ad.reduce_sum(ad.mul(x2, x2)))
    return ad.sub(Tensor(1.0), ad.div(dot, ad.mul(norm1, norm2)))


def sec_loss(anchor: Tensor, positive: Tensor, negative: Tensor,
             margin: float = DEFAULT_MARGIN) -> Tensor:
    """Triplet hinge max{d(a,p) - d(a,n) + margin, 0}."""
    gap = ad.add(
        ad.sub(cosine_distance(anchor, positive), cosine_distance(anchor, negative)),
        Tensor(float(margin)),
    )
    return ad.relu(gap)


def batch_sec_loss(anchors: list[Tensor], positives: list[Tensor],
                   margin: float = DEFAULT_MARGIN) -> Tensor:
    """Mean triplet loss over a batch with cyclic negative sampling."""
    neg = negative_indices(len(anchors))
    losses = [
        sec_loss(anchors[i], positives[i], positives[neg[i]], margin)
        for i in range(len(anchors))
    ]
    total = losses[0]
    for l in losses[1:]:
        total = ad.add(total, l)
    return ad.scalar_mul(total, 1.0 / len(losses))
