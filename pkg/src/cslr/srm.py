"""Signer removal module: statistics pooling over tapped visual features,
a signer-embedding MLP, a signer classifier, and the gradient-reversal
coupling that trains the backbone adversarially.

The reversal node sits immediately after the tap (before pooling), so
every SRM parameter is downstream of it. The node flips gradients with
factor -1; the loss weight lambda is applied once in the overall loss,
which reproduces the (-lambda backbone / +lambda SRM) update pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cslr import autodiff as ad
from cslr.autodiff import Tensor, make_node

STD_EPS = 1e-8
DEFAULT_LAMBDA = 0.75
# the adversary head adapts faster than the backbone at desk scale; it sits
# below the reversal node, so backbone updates keep the common rate
DEFAULT_LR_SCALE = 25.0


@dataclass
class SRMConfig:
    channels: int
    n_signers: int
    lam: float = DEFAULT_LAMBDA
    tap_layer: int = 2
    use_stats_pooling: bool = True   # ablation: temporal mean only
    use_reversal: bool = True        # ablation: plain multi-task coupling

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.n_signers < 2:
            raise ValueError("signer classification needs at least 2 signers")


def init_srm_params(config: SRMConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    c = config.channels
    din = 2 * c if config.use_stats_pooling else c
    scale1 = np.sqrt(2.0 / din)
    scale2 = np.sqrt(2.0 / c)
    return {
        "mlp.w1": Tensor(rng.normal(0.0, scale1, size=(din, c)), requires_grad=True),
        "mlp.b1": Tensor(np.zeros(c), requires_grad=True),
        "mlp.w2": Tensor(rng.normal(0.0, scale2, size=(c, c)), requires_grad=True),
        "mlp.b2": Tensor(np.zeros(c), requires_grad=True),
        "clf.w": Tensor(rng.normal(0.0, scale2, size=(c, config.n_signers)), requires_grad=True),
        "clf.b": Tensor(np.zeros(config.n_signers), requires_grad=True),
    }


def statistics_pooling(f: Tensor, eps: float = STD_EPS) -> Tensor:
    """Concat of temporal mean and population std of (T,C) features -> (2C,).

    Sums run over per-channel sorted values, so the result is bit-exactly
    invariant to any permutation of the time axis.
    """
    x = f.data
    t, c = x.shape
    mean = np.sort(x, axis=0).sum(axis=0) / t
    centered = x - mean
    var = np.sort(centered ** 2, axis=0).sum(axis=0) / t
    std = np.sqrt(var + eps)

    def bwd(g):
        gm, gs = g[:c], g[c:]
        return (gm / t + gs * centered / (t * std),)

    return make_node(np.concatenate([mean, std]), (f,), bwd)


def mean_pooling(f: Tensor) -> Tensor:
    """Temporal mean only (the pooling ablation): (T,C) -> (C,)."""
    return ad.reduce_mean(f, axis=0)


def signer_embedding(stats: Tensor, params: dict[str, Tensor]) -> Tensor:
    """Two-layer ReLU MLP into the (nonnegative) signer embedding space."""
    h = ad.relu(ad.add(ad.matmul(ad.reshape(stats, (1, -1)), params["mlp.w1"]), params["mlp.b1"]))
    out = ad.relu(ad.add(ad.matmul(h, params["mlp.w2"]), params["mlp.b2"]))
    return ad.reshape(out, (-1,))


def signer_loss(e_sig: Tensor, params: dict[str, Tensor], label: int) -> tuple[Tensor, np.ndarray]:
    """Cross entropy of the signer classifier; also returns the probabilities."""
    logits = ad.add(ad.matmul(ad.reshape(e_sig, (1, -1)), params["clf.w"]), params["clf.b"])
    n_sig = logits.shape[1]
    if not 0 <= label < n_sig:
        raise ValueError(f"signer label {label} out of range [0, {n_sig})")
    lsm = ad.log_softmax(logits, axis=1)
    loss = ad.neg(ad.reshape(ad.take(lsm, (slice(0, 1), slice(label, label + 1))), ()))
    return loss, np.exp(lsm.data[0])


def srm_branch(tap: Tensor, params: dict[str, Tensor], config: SRMConfig,
               label: int) -> tuple[Tensor, np.ndarray]:
    """Tap (T,C,J,K) features -> (signer loss, signer probability simplex)."""
    t, c = tap.shape[0], tap.shape[1]
    if c != config.channels:
        raise ValueError(f"tap has {c} channels, SRM configured for {config.channels}")
    frame_feats = ad.reduce_mean(tap, axis=(2, 3))
    if config.use_reversal:
        frame_feats = ad.gradient_reversal(frame_feats, 1.0)
    pooled = statistics_pooling(frame_feats) if config.use_stats_pooling else mean_pooling(frame_feats)
    e_sig = signer_embedding(pooled, params)
    return signer_loss(e_sig, params, label)
