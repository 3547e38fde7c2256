"""Joint optimization: overall loss assembly, Adam with per-group LR
scales, plateau/milestone schedules, the training loop, evaluation, and
the frozen-feature signer probe.

Checkpoints are bit-exact: parameters, Adam moments, and loop state are
stored as f64 tensor blobs behind a plain-text (name, offset, length)
manifest, so save -> load -> step reproduces an uninterrupted run.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cslr import autodiff as ad
from cslr import ctc as ctc_mod
from cslr import data as data_mod
from cslr import sec as sec_mod
from cslr import visual as vis_mod
from cslr.autodiff import ParamGroup, Tensor
from cslr.data import DatasetIndex, SampleEntry
from cslr.heatmap import KeypointTrack, track_targets
from cslr.metrics import corpus_wer, wer
from cslr.model import Model


class NumericError(RuntimeError):
    """Raised when a non-finite gradient aborts optimization."""


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 2
    epochs: int = 60
    lam: float = 0.75
    sac_on: bool = True
    sec_on: bool = True
    srm_on: bool = True
    schedule: str = "plateau"            # "plateau" | "milestones" | "none"
    plateau_factor: float = 0.7
    plateau_patience: int = 6
    milestones: tuple[int, ...] = ()
    milestone_factor: float = 0.7
    sec_margin: float = sec_mod.DEFAULT_MARGIN
    see_lr_scale: float = sec_mod.SEE_LR_SCALE
    srm_lr_scale: float = 25.0
    drop_ratio: float = 0.5
    aug: str = "sfd"                     # "sfd" | "segdrop" | "none"
    beam_width: int = 10
    eval_every: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.srm_on:
            self.lam = 0.0
        if self.sec_on and self.batch_size < 2:
            raise ValueError("sentence-consistency training needs batch_size >= 2")
        if self.aug not in ("sfd", "segdrop", "none"):
            raise ValueError(f"unknown augmentation {self.aug!r}")
        if self.schedule not in ("plateau", "milestones", "none"):
            raise ValueError(f"unknown schedule {self.schedule!r}")


@dataclass
class TrainState:
    epoch: int = 0
    step: int = 0
    lr: float = 1e-4
    best_wer: float = np.inf
    plateau_count: int = 0
    skipped: int = 0
    epoch_ctc: list[float] = field(default_factory=list)
    dev_wer: list[float] = field(default_factory=list)
    log_lines: list[str] = field(default_factory=list)


def overall_loss(ctc: Tensor | None, sac: Tensor | None, sec: Tensor | None,
                 srm: Tensor | None, lam: float, sac_on: bool, sec_on: bool,
                 srm_on: bool) -> Tensor:
    """L_ctc + L_sac + L_sec + lam * L_srm, with unit weights on the rest."""
    if ctc is None:
        raise ValueError("overall loss requires the alignment term")
    total = ctc
    for name, term, on in (("sac", sac, sac_on), ("sec", sec, sec_on)):
        if on:
            if term is None:
                raise ValueError(f"{name} is enabled but its loss is missing")
            total = ad.add(total, term)
    if srm_on:
        if srm is None:
            raise ValueError("srm is enabled but its loss is missing")
        total = ad.add(total, ad.scalar_mul(srm, lam))
    return total


class Adam:
    """Adam with per-group LR scaling and lr-scaled additive weight decay.

    The decay term bypasses the moment machinery: a zero-gradient step
    changes each coordinate by exactly -lr * lr_scale * wd * value.
    """

    def __init__(self, groups: list[ParamGroup], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0):
        self.groups = groups
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [[np.zeros_like(p.data) for p in g.params] for g in groups]
        self.v = [[np.zeros_like(p.data) for p in g.params] for g in groups]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for gi, group in enumerate(self.groups):
            lr_g = self.lr * group.lr_scale
            for pi, p in enumerate(group.params):
                g = p.grad if p.grad is not None else np.zeros_like(p.data)
                if not np.all(np.isfinite(g)):
                    raise NumericError(
                        f"non-finite gradient in group {group.name!r} (param {pi})"
                    )
                m = self.m[gi][pi]
                v = self.v[gi][pi]
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                update = (m / c1) / (np.sqrt(v / c2) + self.eps)
                if self.weight_decay:
                    update = update + self.weight_decay * p.data
                p.data = p.data - lr_g * update

    def zero_grad(self) -> None:
        for group in self.groups:
            group.zero_grad()


def plateau_step(state: TrainState, dev_wer_value: float, factor: float = 0.7,
                 patience: int = 6) -> float:
    """Decay LR by `factor` after `patience` evals without strict improvement."""
    if dev_wer_value < state.best_wer:
        state.best_wer = dev_wer_value
        state.plateau_count = 0
    else:
        state.plateau_count += 1
        if state.plateau_count >= patience:
            state.lr *= factor
            state.plateau_count = 0
    return state.lr


def milestone_step(state: TrainState, epoch: int, milestones, factor: float) -> float:
    if epoch in set(milestones):
        state.lr *= factor
    return state.lr


# ---------------------------------------------------------------------------
# forward / loss assembly

def _augment(frames, keypoints, config: TrainConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    if config.aug == "sfd":
        return data_mod.sfd_train(frames, keypoints, config.drop_ratio, rng)
    if config.aug == "segdrop":
        return data_mod.seg_and_drop(frames, keypoints, rng)
    return frames, keypoints


def _mean(losses: list[Tensor]) -> Tensor:
    total = losses[0]
    for l in losses[1:]:
        total = ad.add(total, l)
    return ad.scalar_mul(total, 1.0 / len(losses))


def batch_losses(model: Model, samples, config: TrainConfig):
    """Forward every active branch on a batch of (frames, kps, glosses, signer).

    Returns (loss tensors dict or None, number of infeasible samples skipped).
    """
    j, k = model.mask_resolution()
    ctc_terms, sac_terms, srm_terms = [], [], []
    visual_embs, seq_embs = [], []
    skipped = 0
    for frames, keypoints, glosses, signer in samples:
        targets = None
        if config.sac_on:
            track = KeypointTrack(points=keypoints, height=model.config.height,
                                  width=model.config.width)
            targets = track_targets(track, j, k, model.config.gamma, model.config.gamma)
        vout = model.visual_forward(frames, sac_active=config.sac_on, targets=targets)
        s = model.sequential_forward(vout.features)
        logits = model.logits(s)
        l_ctc = ctc_mod.ctc_loss(logits, glosses)
        if not np.isfinite(l_ctc.data):
            skipped += 1
            continue
        ctc_terms.append(l_ctc)
        if config.sac_on:
            sac_terms.append(vis_mod.sac_loss(vout.mask, targets))
        if config.sec_on:
            visual_embs.append(model.sentence_embedding(vout.features))
            seq_embs.append(model.sentence_embedding(s))
        if config.srm_on:
            srm_terms.append(model.srm_branch(vout.tap, signer)[0])
    if not ctc_terms:
        return None, skipped

    losses = {"ctc": _mean(ctc_terms)}
    losses["sac"] = _mean(sac_terms) if sac_terms else None
    losses["srm"] = _mean(srm_terms) if srm_terms else None
    if config.sec_on and len(visual_embs) >= 2:
        losses["sec"] = sec_mod.batch_sec_loss(visual_embs, seq_embs, config.sec_margin)
    else:
        losses["sec"] = None
    return losses, skipped


def _load_entry(entry: SampleEntry):
    frames, keypoints = data_mod.load_sample(entry)
    return frames, keypoints, entry.glosses, entry.signer


# ---------------------------------------------------------------------------
# checkpointing

_CKPT_MAGIC = "CSLRCKPT1"


def save_checkpoint(path, model: Model, optimizer: Adam, state: TrainState) -> None:
    arrays: dict[str, np.ndarray] = dict(model.state_arrays())
    arrays.update(model.config.to_arrays())
    for gi, group in enumerate(optimizer.groups):
        for pi in range(len(group.params)):
            arrays[f"adam.m.{group.name}.{pi}"] = optimizer.m[gi][pi]
            arrays[f"adam.v.{group.name}.{pi}"] = optimizer.v[gi][pi]
    arrays["meta"] = np.array([
        state.epoch, state.step, state.lr, state.best_wer,
        state.plateau_count, state.skipped, optimizer.t,
    ], dtype=np.float64)

    blobs: list[bytes] = []
    manifest: list[str] = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        blob = (data_mod.MAGIC_F64 + struct.pack("<I", arr.ndim)
                + struct.pack(f"<{arr.ndim}I", *arr.shape)
                + arr.astype("<f8").tobytes(order="C"))
        manifest.append(f"{name} {offset} {len(blob)}")
        blobs.append(blob)
        offset += len(blob)
    header = "\n".join([f"{_CKPT_MAGIC} {len(arrays)}"] + manifest + ["---", ""])
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        for blob in blobs:
            fh.write(blob)


def _parse_blob(blob: bytes, name: str) -> np.ndarray:
    if blob[:4] != data_mod.MAGIC_F64:
        raise data_mod.FormatError(f"checkpoint entry {name}: bad magic")
    (rank,) = struct.unpack_from("<I", blob, 4)
    dims = struct.unpack_from(f"<{rank}I", blob, 8)
    return np.frombuffer(blob, dtype="<f8", offset=8 + 4 * rank).reshape(dims).copy()


def load_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    sep = raw.find(b"---\n")
    if sep < 0 or not raw.startswith(_CKPT_MAGIC.encode("ascii")):
        raise data_mod.FormatError(f"{path}: not a checkpoint file")
    header = raw[:sep].decode("ascii").splitlines()
    body = raw[sep + 4:]
    arrays: dict[str, np.ndarray] = {}
    for line in header[1:]:
        name, offset, length = line.rsplit(" ", 2)
        start = int(offset)
        arrays[name] = _parse_blob(body[start:start + int(length)], name)
    return arrays


def restore_checkpoint(arrays: dict[str, np.ndarray], model: Model,
                       optimizer: Adam | None = None,
                       state: TrainState | None = None) -> None:
    model.load_state({k: v for k, v in arrays.items()
                      if not k.startswith("adam.") and k != "meta"})
    meta = arrays["meta"]
    if optimizer is not None:
        for gi, group in enumerate(optimizer.groups):
            for pi in range(len(group.params)):
                optimizer.m[gi][pi] = arrays[f"adam.m.{group.name}.{pi}"].copy()
                optimizer.v[gi][pi] = arrays[f"adam.v.{group.name}.{pi}"].copy()
        optimizer.t = int(meta[6])
    if state is not None:
        state.epoch = int(meta[0])
        state.step = int(meta[1])
        state.lr = float(meta[2])
        state.best_wer = float(meta[3])
        state.plateau_count = int(meta[4])
        state.skipped = int(meta[5])


# ---------------------------------------------------------------------------
# training loop

def fit(model: Model, index: DatasetIndex, config: TrainConfig,
        out_dir=None, train_entries=None, dev_entries=None,
        resume_from=None, on_epoch=None) -> TrainState:
    """Seeded epoch loop: shuffle, augment, forward, backward, Adam step.

    Evaluates the dev split (beam decode -> corpus WER) every
    `eval_every` epochs and checkpoints best/last when out_dir is given.
    `on_epoch(model, state)` may return True to stop early.
    """
    train = list(train_entries if train_entries is not None else index.split("train"))
    dev = list(dev_entries if dev_entries is not None else index.split("dev"))
    if not train:
        raise ValueError("no training samples")

    optimizer = Adam(model.param_groups(), lr=config.lr,
                     weight_decay=config.weight_decay)
    for group in optimizer.groups:
        if group.name == "see":
            group.lr_scale = config.see_lr_scale
        elif group.name == "srm":
            group.lr_scale = config.srm_lr_scale
    state = TrainState(lr=config.lr)
    if resume_from is not None:
        restore_checkpoint(load_checkpoint(resume_from), model, optimizer, state)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    cache: dict[str, tuple] = {}

    def sample_of(entry):
        if entry.sample_id not in cache:
            cache[entry.sample_id] = _load_entry(entry)
        return cache[entry.sample_id]

    for epoch in range(state.epoch, config.epochs):
        rng = np.random.default_rng((config.seed, 7919, epoch))
        order = rng.permutation(len(train))
        ctc_epoch: list[float] = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            samples = []
            for i in idx:
                frames, keypoints, glosses, signer = sample_of(train[i])
                frames, keypoints = _augment(frames, keypoints, config, rng)
                samples.append((frames, keypoints, glosses, signer))
            losses, skipped = batch_losses(model, samples, config)
            state.skipped += skipped
            if losses is None:
                continue
            sec_active = config.sec_on and losses["sec"] is not None
            total = overall_loss(losses["ctc"], losses["sac"], losses["sec"],
                                 losses["srm"], config.lam, config.sac_on,
                                 sec_active, config.srm_on)
            optimizer.zero_grad()
            ad.backward(total)
            optimizer.lr = state.lr
            optimizer.step()
            state.step += 1
            ctc_epoch.append(losses["ctc"].item())

            def val(key):
                return losses[key].item() if losses[key] is not None else 0.0

            state.log_lines.append(
                f"{epoch} {state.step} {total.item():.6f} {val('ctc'):.6f} "
                f"{val('sac'):.6f} {val('sec'):.6f} {val('srm'):.6f} {state.lr:.6g}"
            )
        state.epoch = epoch + 1
        state.epoch_ctc.append(float(np.mean(ctc_epoch)) if ctc_epoch else np.nan)

        if config.schedule == "milestones":
            milestone_step(state, state.epoch, config.milestones, config.milestone_factor)
        if dev and state.epoch % config.eval_every == 0:
            dev_wer_value, _ = evaluate(model, dev, index.vocab,
                                        beam_width=config.beam_width,
                                        p_drop=config.drop_ratio if config.aug != "none" else 0.0)
            state.dev_wer.append(dev_wer_value)
            improved = dev_wer_value < state.best_wer
            if config.schedule == "plateau":
                plateau_step(state, dev_wer_value, config.plateau_factor,
                             config.plateau_patience)
            else:
                state.best_wer = min(state.best_wer, dev_wer_value)
            if out is not None:
                save_checkpoint(out / "last.ckpt", model, optimizer, state)
                if improved:
                    save_checkpoint(out / "best.ckpt", model, optimizer, state)
        elif out is not None:
            save_checkpoint(out / "last.ckpt", model, optimizer, state)

        if out is not None:
            (out / "train.log").write_text("\n".join(state.log_lines) + "\n")
        if on_epoch is not None and on_epoch(model, state):
            break
    return state


def evaluate(model: Model, entries, vocab, beam_width: int = 10,
             p_drop: float = 0.5) -> tuple[float, list[str]]:
    """Corpus WER over entries plus per-sample report lines (id ref hyp wer)."""
    pairs = []
    report = []
    for entry in entries:
        frames, keypoints = data_mod.load_sample(entry)
        frames, _ = data_mod.sfd_infer(frames, keypoints, p_drop)
        logits = model.decode_logits(frames)
        result = ctc_mod.beam_decode(logits, beam_width)
        pairs.append((entry.glosses, result.ids))
        ref_s = " ".join(vocab[g - 1] for g in entry.glosses)
        hyp_s = " ".join(vocab[g - 1] for g in result.ids)
        report.append(f"{entry.sample_id}\t{ref_s}\t{hyp_s}\t"
                      f"{100.0 * wer(entry.glosses, result.ids):.2f}")
    return corpus_wer(pairs), report


# ---------------------------------------------------------------------------
# signer probe

def pooled_tap_features(model: Model, entries) -> tuple[np.ndarray, np.ndarray]:
    """Frozen stats-pooled tap features (n, 2C) and signer labels (n,)."""
    feats = []
    labels = []
    for entry in entries:
        frames, _ = data_mod.load_sample(entry)
        vout = model.visual_forward(frames, sac_active=False)
        per_frame = vout.tap.data.mean(axis=(2, 3))
        mu = per_frame.mean(axis=0)
        sd = np.sqrt(((per_frame - mu) ** 2).mean(axis=0) + 1e-8)
        feats.append(np.concatenate([mu, sd]))
        labels.append(entry.signer)
    return np.asarray(feats), np.asarray(labels)


def probe_signer_accuracy(model: Model, index: DatasetIndex, split: str = "train",
                          seed: int = 0, holdout: float = 0.25,
                          iters: int = 400) -> float:
    """Held-out accuracy of a fresh affine signer classifier on tap features.

    The measurable proxy for residual signer information in the backbone.
    """
    entries = index.split(split)
    feats, raw_labels = pooled_tap_features(model, entries)
    signer_ids = sorted(set(raw_labels.tolist()))
    labels = np.asarray([signer_ids.index(s) for s in raw_labels])
    n_classes = len(signer_ids)

    rng = np.random.default_rng((seed, 104729))
    order = rng.permutation(len(entries))
    n_hold = max(1, int(holdout * len(entries)))
    hold, fit_idx = order[:n_hold], order[n_hold:]

    mu = feats[fit_idx].mean(axis=0)
    sd = feats[fit_idx].std(axis=0) + 1e-8
    x_fit = (feats[fit_idx] - mu) / sd
    x_hold = (feats[hold] - mu) / sd
    y_fit = labels[fit_idx]

    w = np.zeros((feats.shape[1], n_classes))
    b = np.zeros(n_classes)
    onehot = np.eye(n_classes)[y_fit]
    for _ in range(iters):
        z = x_fit @ w + b
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        gz = (p - onehot) / len(y_fit)
        w -= 1.0 * (x_fit.T @ gz + 1e-4 * w)
        b -= 1.0 * gz.sum(axis=0)
    pred = np.argmax(x_hold @ w + b, axis=1)
    return float(np.mean(pred == labels[hold]))
