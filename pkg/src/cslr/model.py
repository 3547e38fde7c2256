"""Full recognition model: visual stack + local transformer + gloss head,
with the sentence-embedding extractor and signer-removal branch attached
for training. Parameters are partitioned into backbone / SEE / SRM
groups (the SEE group runs at a reduced learning rate; the SRM group is
the adversarial side of the gradient-reversal coupling).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cslr import autodiff as ad
from cslr import sec as sec_mod
from cslr import sequential as seq_mod
from cslr import srm as srm_mod
from cslr import visual as vis_mod
from cslr.autodiff import ParamGroup, ROLE_BACKBONE, ROLE_SRM, Tensor
from cslr.heatmap import DEFAULT_GAMMA
from cslr.sequential import GlossHead, LTConfig
from cslr.srm import SRMConfig
from cslr.visual import VisualConfig


@dataclass
class ModelConfig:
    vocab_size: int = 5
    n_signers: int = 6
    height: int = 32
    width: int = 32
    t_max: int = 64
    gamma: float = DEFAULT_GAMMA
    visual: VisualConfig = field(default_factory=VisualConfig)
    lt: LTConfig = field(default_factory=LTConfig)
    srm_lambda: float = srm_mod.DEFAULT_LAMBDA
    srm_use_stats_pooling: bool = True
    srm_use_reversal: bool = True
    see_lr_scale: float = sec_mod.SEE_LR_SCALE
    srm_lr_scale: float = srm_mod.DEFAULT_LR_SCALE
    sec_margin: float = sec_mod.DEFAULT_MARGIN

    def srm_config(self) -> SRMConfig:
        return SRMConfig(
            channels=self.visual.tap_channels(),
            n_signers=self.n_signers,
            lam=self.srm_lambda,
            tap_layer=self.visual.attention_after,
            use_stats_pooling=self.srm_use_stats_pooling,
            use_reversal=self.srm_use_reversal,
        )

    def to_arrays(self) -> dict[str, np.ndarray]:
        """Numeric encoding used to make checkpoints self-describing."""
        scalars = np.array([
            self.vocab_size, self.n_signers, self.height, self.width,
            self.t_max, self.gamma, self.visual.attention_after,
            self.visual.in_channels, self.visual.feature_dim,
            self.lt.layers, self.lt.model_dim, self.lt.heads,
            self.lt.dtcn_kernel, self.lt.window, self.srm_lambda,
            float(self.srm_use_stats_pooling), float(self.srm_use_reversal),
            self.see_lr_scale, self.sec_margin, self.srm_lr_scale,
        ], dtype=np.float64)
        stack = np.array(self.visual.conv_stack, dtype=np.float64)
        return {"cfg.scalars": scalars, "cfg.conv_stack": stack}

    @staticmethod
    def from_arrays(arrays: dict[str, np.ndarray]) -> "ModelConfig":
        s = arrays["cfg.scalars"]
        stack = [tuple(int(v) for v in row) for row in arrays["cfg.conv_stack"]]
        visual = VisualConfig(conv_stack=stack, attention_after=int(s[6]),
                              in_channels=int(s[7]), feature_dim=int(s[8]))
        lt = LTConfig(layers=int(s[9]), model_dim=int(s[10]), heads=int(s[11]),
                      dtcn_kernel=int(s[12]), window=float(s[13]))
        return ModelConfig(
            vocab_size=int(s[0]), n_signers=int(s[1]), height=int(s[2]),
            width=int(s[3]), t_max=int(s[4]), gamma=float(s[5]),
            visual=visual, lt=lt, srm_lambda=float(s[14]),
            srm_use_stats_pooling=bool(s[15]), srm_use_reversal=bool(s[16]),
            see_lr_scale=float(s[17]), sec_margin=float(s[18]),
            srm_lr_scale=float(s[19]),
        )


class Model:
    """Parameter container plus the forward surfaces of each module."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        self.visual_params = vis_mod.init_visual_params(config.visual, rng)
        self.lt_params = seq_mod.init_lt_params(config.lt, rng)
        self.head = GlossHead.init(config.lt.model_dim, config.vocab_size, rng)
        self.see_params = sec_mod.init_see_params(
            config.lt.model_dim, config.t_max, config.lt.dtcn_kernel, rng
        )
        self.srm = config.srm_config()
        self.srm_params = srm_mod.init_srm_params(self.srm, rng)

    # -- parameter bookkeeping ------------------------------------------

    def named_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update({f"visual.{k}": v for k, v in self.visual_params.items()})
        out.update({f"seq.{k}": v for k, v in self.lt_params.items()})
        out.update(self.head.params())
        out.update({f"see.{k}": v for k, v in self.see_params.items()})
        out.update({f"srm.{k}": v for k, v in self.srm_params.items()})
        return out

    def param_groups(self) -> list[ParamGroup]:
        backbone = list(self.visual_params.values()) + list(self.lt_params.values())
        backbone += [self.head.w, self.head.b]
        return [
            ParamGroup("backbone", backbone, role=ROLE_BACKBONE),
            ParamGroup("see", list(self.see_params.values()), role=ROLE_BACKBONE,
                       lr_scale=self.config.see_lr_scale),
            ParamGroup("srm", list(self.srm_params.values()), role=ROLE_SRM,
                       lr_scale=self.config.srm_lr_scale),
        ]

    def zero_grad(self) -> None:
        for g in self.param_groups():
            g.zero_grad()

    def mask_resolution(self) -> tuple[int, int]:
        return self.config.visual.mask_resolution(self.config.height, self.config.width)

    # -- forward surfaces -------------------------------------------------

    def visual_forward(self, frames, sac_active: bool = False,
                       targets: np.ndarray | None = None) -> vis_mod.VisualOut:
        return vis_mod.visual_forward(frames, self.visual_params, self.config.visual,
                                      sac_active=sac_active, targets=targets)

    def sequential_forward(self, v: Tensor) -> Tensor:
        return seq_mod.sequential_forward(v, self.lt_params, self.config.lt)

    def logits(self, s: Tensor) -> Tensor:
        return seq_mod.gloss_logits(s, self.head)

    def sentence_embedding(self, features: Tensor) -> Tensor:
        return sec_mod.see_forward(features, self.see_params, self.config.lt.heads)

    def srm_branch(self, tap: Tensor, signer: int):
        return srm_mod.srm_branch(tap, self.srm_params, self.srm, signer)

    def decode_logits(self, frames) -> np.ndarray:
        """Inference path: frames -> gloss logits, no auxiliary branches."""
        out = self.visual_forward(frames, sac_active=False)
        s = self.sequential_forward(out.features)
        return self.logits(s).data

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_params().items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.named_params()
        missing = set(params) - set(arrays)
        if missing:
            raise ValueError(f"checkpoint is missing parameters: {sorted(missing)[:4]}...")
        for name, p in params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != model {p.data.shape}")
            p.data = arr
