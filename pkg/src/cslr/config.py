"""Plain-text key=value experiment configuration.

One flat namespace covers generation, model, and training settings.
Unknown keys are rejected; every run echoes its effective (resolved)
configuration to the output directory.
"""

from __future__ import annotations

from pathlib import Path

from cslr.data import SynthSpec
from cslr.model import ModelConfig
from cslr.sequential import LTConfig
from cslr.train import TrainConfig
from cslr.visual import VisualConfig


class ConfigError(ValueError):
    pass


def _parse_bool(raw: str) -> bool:
    val = raw.strip().lower()
    if val in ("true", "1", "yes", "on"):
        return True
    if val in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _parse_int_list(raw: str) -> tuple[int, ...]:
    raw = raw.strip()
    if not raw:
        return ()
    return tuple(int(v) for v in raw.split(","))


# key -> (parser, default)
SCHEMA: dict[str, tuple] = {
    # synthetic dataset
    "vocab_size": (int, 5),
    "n_signers": (int, 6),
    "train_signers": (int, 4),
    "frames_per_gloss_mean": (int, 6),
    "frames_per_gloss_jitter": (int, 2),
    "frame_height": (int, 32),
    "frame_width": (int, 32),
    "train_sentences": (int, 200),
    "dev_sentences": (int, 40),
    "test_sentences": (int, 40),
    "min_glosses": (int, 2),
    "max_glosses": (int, 5),
    "split_mode": (str, "si"),
    "seed": (int, 0),
    # model
    "feature_dim": (int, 64),
    "attention_after": (int, 2),
    "conv_channels": (_parse_int_list, (16, 32, 64, 64)),
    "conv_strides": (_parse_int_list, (2, 2, 2, 1)),
    "gamma": (float, 14.0),
    "lt_layers": (int, 2),
    "heads": (int, 4),
    "dtcn_kernel": (int, 5),
    "window_d": (str, "auto"),
    "t_max": (int, 0),
    "sec_margin": (float, 2.0),
    "see_lr_scale": (float, 0.1),
    "srm_lambda": (float, 0.75),
    "srm_lr_scale": (float, 25.0),
    "srm_stats_pooling": (_parse_bool, True),
    "srm_reversal": (_parse_bool, True),
    # training
    "lr": (float, 1e-4),
    "weight_decay": (float, 1e-4),
    "batch_size": (int, 2),
    "epochs": (int, 60),
    "sac": (_parse_bool, True),
    "sec": (_parse_bool, True),
    "srm": (_parse_bool, True),
    "schedule": (str, "plateau"),
    "plateau_factor": (float, 0.7),
    "plateau_patience": (int, 6),
    "milestones": (_parse_int_list, ()),
    "milestone_factor": (float, 0.7),
    "drop_ratio": (float, 0.5),
    "aug": (str, "sfd"),
    "beam": (int, 10),
    "eval_every": (int, 1),
}


def default_config() -> dict:
    return {k: v for k, (_, v) in SCHEMA.items()}


def parse_config(path) -> dict:
    """Read a key=value file, applying defaults for absent keys."""
    cfg = default_config()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        parser = SCHEMA[key][0]
        try:
            cfg[key] = parser(raw)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return cfg


def echo_config(cfg: dict, path) -> None:
    lines = []
    for key in SCHEMA:
        val = cfg[key]
        if isinstance(val, tuple):
            val = ",".join(str(v) for v in val)
        elif isinstance(val, bool):
            val = "true" if val else "false"
        lines.append(f"{key}={val}")
    Path(path).write_text("\n".join(lines) + "\n")


def synth_spec(cfg: dict) -> SynthSpec:
    return SynthSpec(
        vocab_size=cfg["vocab_size"],
        n_signers=cfg["n_signers"],
        train_signers=cfg["train_signers"],
        frames_per_gloss_mean=cfg["frames_per_gloss_mean"],
        frames_per_gloss_jitter=cfg["frames_per_gloss_jitter"],
        height=cfg["frame_height"],
        width=cfg["frame_width"],
        train_sentences=cfg["train_sentences"],
        dev_sentences=cfg["dev_sentences"],
        test_sentences=cfg["test_sentences"],
        min_glosses=cfg["min_glosses"],
        max_glosses=cfg["max_glosses"],
        split_mode=cfg["split_mode"],
        seed=cfg["seed"],
    )


def model_config(cfg: dict, vocab_size: int, n_signers: int, t_max: int,
                 window: float) -> ModelConfig:
    channels = cfg["conv_channels"]
    strides = cfg["conv_strides"]
    if len(channels) != len(strides):
        raise ConfigError("conv_channels and conv_strides must have equal length")
    stack = [(c, 3, s, 1) for c, s in zip(channels, strides)]
    visual = VisualConfig(conv_stack=stack, attention_after=cfg["attention_after"],
                          feature_dim=cfg["feature_dim"])
    lt = LTConfig(layers=cfg["lt_layers"], model_dim=cfg["feature_dim"],
                  heads=cfg["heads"], dtcn_kernel=cfg["dtcn_kernel"], window=window)
    return ModelConfig(
        vocab_size=vocab_size,
        n_signers=n_signers,
        height=cfg["frame_height"],
        width=cfg["frame_width"],
        t_max=t_max,
        gamma=cfg["gamma"],
        visual=visual,
        lt=lt,
        srm_lambda=cfg["srm_lambda"],
        srm_use_stats_pooling=cfg["srm_stats_pooling"],
        srm_use_reversal=cfg["srm_reversal"],
        see_lr_scale=cfg["see_lr_scale"],
        srm_lr_scale=cfg["srm_lr_scale"],
        sec_margin=cfg["sec_margin"],
    )


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        lr=cfg["lr"],
        weight_decay=cfg["weight_decay"],
        batch_size=cfg["batch_size"],
        epochs=cfg["epochs"],
        lam=cfg["srm_lambda"],
        sac_on=cfg["sac"],
        sec_on=cfg["sec"],
        srm_on=cfg["srm"],
        schedule=cfg["schedule"],
        plateau_factor=cfg["plateau_factor"],
        plateau_patience=cfg["plateau_patience"],
        milestones=cfg["milestones"],
        milestone_factor=cfg["milestone_factor"],
        sec_margin=cfg["sec_margin"],
        see_lr_scale=cfg["see_lr_scale"],
        srm_lr_scale=cfg["srm_lr_scale"],
        drop_ratio=cfg["drop_ratio"],
        aug=cfg["aug"],
        beam_width=cfg["beam"],
        eval_every=cfg["eval_every"],
        seed=cfg["seed"],
    )
