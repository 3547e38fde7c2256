"""Convolutional visual module with a keypoint-guided spatial attention
block inserted mid-stack, plus the attention-consistency (SAC) loss.

Feature maps are channel-first: (T, C, J, K) with T the frame axis. The
attention block squeezes the maps two ways (channel max and a
softmax-weighted channel sum), fuses them with a 7x7 conv, and applies
the sigmoid mask multiplicatively. The mask path runs at train and test;
only the SAC supervision is dropped at inference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cslr import autodiff as ad
from cslr.autodiff import Tensor

ATTENTION_KERNEL = 7


@dataclass
class VisualConfig:
    """conv_stack entries are (out_channels, kernel, stride, pad)."""

    conv_stack: list[tuple[int, int, int, int]] = field(
        default_factory=lambda: [(16, 3, 2, 1), (32, 3, 2, 1), (64, 3, 2, 1), (64, 3, 1, 1)]
    )
    attention_after: int = 2  # 1-based conv layer index
    in_channels: int = 3
    feature_dim: int = 64

    def mask_resolution(self, height: int, width: int) -> tuple[int, int]:
        """Spatial size of the feature maps where the attention mask lives."""
        h, w = height, width
        for i, (_, k, s, p) in enumerate(self.conv_stack, start=1):
            h = (h + 2 * p - k) // s + 1
            w = (w + 2 * p - k) // s + 1
            if i == self.attention_after:
                return h, w
        raise ValueError(f"attention_after={self.attention_after} beyond stack depth")

    def tap_channels(self) -> int:
        return self.conv_stack[self.attention_after - 1][0]


@dataclass
class AttentionArtifacts:
    """Learned mask and its supervision target, both (T, J, K)."""

    mask: Tensor
    target: np.ndarray


def init_visual_params(config: VisualConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    cin = config.in_channels
    for i, (cout, k, _, _) in enumerate(config.conv_stack, start=1):
        scale = np.sqrt(2.0 / (cin * k * k))
        params[f"conv{i}.w"] = Tensor(rng.normal(0.0, scale, size=(cout, cin, k, k)), requires_grad=True)
        params[f"conv{i}.b"] = Tensor(np.zeros(cout), requires_grad=True)
        cin = cout
    ak = ATTENTION_KERNEL
    scale = np.sqrt(2.0 / (2 * ak * ak))
    params["attn.w"] = Tensor(rng.normal(0.0, scale, size=(1, 2, ak, ak)), requires_grad=True)
    params["attn.b"] = Tensor(np.zeros(1), requires_grad=True)
    return params


def attention_param_count(params: dict[str, Tensor]) -> int:
    return params["attn.w"].size + params["attn.b"].size


def cmp_squeeze(f: Tensor) -> Tensor:
    """Channel-wise max pooling: (T,C,J,K) -> (T,1,J,K)."""
    return ad.reduce_max(f, axis=1, keepdims=True)


def channel_weights(f: Tensor) -> Tensor:
    """Softmax over per-channel spatial means: (T,C,J,K) -> (T,C)."""
    return ad.softmax(ad.reduce_mean(f, axis=(2, 3)), axis=1)


def weighted_squeeze(f: Tensor, e: Tensor) -> Tensor:
    """Channel sum of F weighted by E: (T,C,J,K),(T,C) -> (T,1,J,K)."""
    t, c = e.shape
    return ad.reduce_sum(ad.mul(f, ad.reshape(e, (t, c, 1, 1))), axis=1, keepdims=True)


def attention_mask(m1: Tensor, m2: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fuse the two squeezed maps into a mask in (0,1): (T,1,J,K)."""
    if m1.shape != m2.shape:
        raise ad.ShapeError(f"attention_mask: shapes {m1.shape} and {m2.shape} differ")
    fused = ad.concat([m1, m2], axis=1)
    return ad.sigmoid(ad.conv2d(fused, w, b, stride=1, padding=ATTENTION_KERNEL // 2))


def apply_attention(f: Tensor, m: Tensor) -> Tensor:
    """Elementwise product, mask broadcast over channels."""
    return ad.mul(f, m)


def sac_loss(mask: Tensor, target) -> Tensor:
    """Mean over frames of the per-cell squared mask/target gap, in [0,1]."""
    target = ad.as_tensor(target)
    if mask.shape != target.shape:
        raise ad.ShapeError(f"sac_loss: shapes {mask.shape} and {target.shape} differ")
    diff = ad.sub(mask, target)
    return ad.reduce_mean(ad.mul(diff, diff))


@dataclass
class VisualOut:
    features: Tensor            # (T, d)
    artifacts: AttentionArtifacts | None
    tap: Tensor                 # (T, C, J, K) features after the attention layer
    mask: Tensor                # (T, J, K)


def visual_forward(frames, params: dict[str, Tensor], config: VisualConfig,
                   sac_active: bool = False, targets: np.ndarray | None = None) -> VisualOut:
    """Run the conv stack on (T,H,W,C) frames; returns per-frame features.

    The attention multiply always runs; targets are only consulted (and
    artifacts returned) when sac_active is set.
    """
    x = ad.transpose(ad.as_tensor(frames), (0, 3, 1, 2))
    tap = None
    mask3 = None
    for i, (_, k, s, p) in enumerate(config.conv_stack, start=1):
        x = ad.relu(ad.conv2d(x, params[f"conv{i}.w"], params[f"conv{i}.b"], stride=s, padding=p))
        if i == config.attention_after:
            m1 = cmp_squeeze(x)
            e = channel_weights(x)
            m2 = weighted_squeeze(x, e)
            m = attention_mask(m1, m2, params["attn.w"], params["attn.b"])
            x = apply_attention(x, m)
            tap = x
            t, _, j, kk = m.shape
            mask3 = ad.reshape(m, (t, j, kk))
    if tap is None:
        raise ValueError("attention_after index never reached in the conv stack")

    v = ad.reduce_mean(x, axis=(2, 3))
    artifacts = None
    if sac_active:
        if targets is None:
            raise ValueError("sac_active requires supervision targets")
        if tuple(targets.shape) != mask3.shape:
            raise ad.ShapeError(
                f"visual_forward: target shape {targets.shape} does not match mask {mask3.shape}"
            )
        artifacts = AttentionArtifacts(mask=mask3, target=np.asarray(targets, dtype=np.float64))
    return VisualOut(features=v, artifacts=artifacts, tap=tap, mask=mask3)
