"""Synthetic multi-signer dataset generation, on-disk formats, and the
frame-dropping augmentations.

File formats
------------
Tensor files: magic ``SLT1``, u32-LE rank, rank x u32-LE dims, row-major
f32-LE payload (promoted to float64 in memory). A ``SLT8`` variant with
an f64 payload exists for checkpoints, where bit-exact resume matters.

Keypoint CSV: header line then one row per frame with columns
frame_index, face_x, face_y, lh_x, lh_y, rh_x, rh_y (pixel coordinates,
decimal text; x indexes rows, y columns).

labels.tsv: sample_id <tab> signer_id <tab> space-separated glosses.
vocab.txt: one gloss per line; id = line number + 1 (blank is 0).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC_F32 = b"SLT1"
MAGIC_F64 = b"SLT8"
KEYPOINT_HEADER = "frame_index,face_x,face_y,lh_x,lh_y,rh_x,rh_y"


class FormatError(ValueError):
    """Raised for malformed or truncated data files."""


def write_tensor(path, array, dtype: str = "f4") -> None:
    """Write an array in the SLT container; dtype 'f4' (SLT1) or 'f8' (SLT8)."""
    array = np.asarray(array)
    if array.ndim < 1:
        raise FormatError(f"{path}: tensors must have ndim >= 1")
    magic = MAGIC_F32 if dtype == "f4" else MAGIC_F64
    payload = array.astype("<" + dtype).tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", array.ndim))
        fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
        fh.write(payload)


def tensor_dims(path) -> tuple[int, ...]:
    """Read only the shape header of an SLT container."""
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) < 8 or head[:4] not in (MAGIC_F32, MAGIC_F64):
            raise FormatError(f"{path}: bad magic or truncated header")
        (rank,) = struct.unpack("<I", head[4:])
        dims_raw = fh.read(4 * rank)
    if len(dims_raw) < 4 * rank:
        raise FormatError(f"{path}: truncated dimension header")
    return struct.unpack(f"<{rank}I", dims_raw)


def read_tensor(path) -> np.ndarray:
    """Read an SLT container back as float64."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8:
        raise FormatError(f"{path}: truncated tensor file")
    magic = blob[:4]
    if magic not in (MAGIC_F32, MAGIC_F64):
        raise FormatError(f"{path}: bad magic {magic!r}")
    itemsize = 4 if magic == MAGIC_F32 else 8
    (rank,) = struct.unpack_from("<I", blob, 4)
    if rank < 1:
        raise FormatError(f"{path}: tensors must have ndim >= 1")
    header_end = 8 + 4 * rank
    if len(blob) < header_end:
        raise FormatError(f"{path}: truncated dimension header")
    dims = struct.unpack_from(f"<{rank}I", blob, 8)
    count = int(np.prod(dims))
    if len(blob) != header_end + count * itemsize:
        raise FormatError(f"{path}: payload size does not match header")
    dt = "<f4" if magic == MAGIC_F32 else "<f8"
    data = np.frombuffer(blob, dtype=dt, count=count, offset=header_end)
    return data.astype(np.float64).reshape(dims)


def write_keypoints(path, points: np.ndarray) -> None:
    """Write a (T,3,2) center track as the keypoint CSV."""
    lines = [KEYPOINT_HEADER]
    for t, frame in enumerate(points):
        flat = frame.reshape(-1)
        lines.append(",".join([str(t)] + [f"{v:.4f}" for v in flat]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_keypoints(path) -> np.ndarray:
    text = Path(path).read_text().strip().splitlines()
    if not text or text[0].strip() != KEYPOINT_HEADER:
        raise FormatError(f"{path}: missing keypoint header")
    rows = []
    for line in text[1:]:
        cells = line.split(",")
        if len(cells) != 7:
            raise FormatError(f"{path}: expected 7 columns, got {len(cells)}")
        rows.append([float(c) for c in cells[1:]])
    return np.asarray(rows, dtype=np.float64).reshape(-1, 3, 2)


# ---------------------------------------------------------------------------
# synthetic dataset

@dataclass
class SynthSpec:
    vocab_size: int = 5
    n_signers: int = 6
    train_signers: int = 4           # SI mode: remaining signers are unseen
    frames_per_gloss_mean: int = 6
    frames_per_gloss_jitter: int = 2
    height: int = 32
    width: int = 32
    train_sentences: int = 200
    dev_sentences: int = 40
    test_sentences: int = 40
    min_glosses: int = 2
    max_glosses: int = 5
    split_mode: str = "si"           # "si" (unseen eval signers) or "sd"
    seed: int = 0

    def __post_init__(self):
        if self.split_mode not in ("si", "sd"):
            raise ValueError(f"unknown split_mode {self.split_mode!r}")
        if self.split_mode == "si" and not 0 < self.train_signers < self.n_signers:
            raise ValueError("si mode needs 0 < train_signers < n_signers")


_TINTS = np.array([
    [0.00, 0.05, 0.10],
    [0.10, 0.00, 0.05],
    [0.05, 0.10, 0.00],
    [0.10, 0.10, 0.00],
    [0.00, 0.10, 0.10],
    [0.10, 0.00, 0.10],
    [0.05, 0.05, 0.10],
    [0.10, 0.05, 0.00],
])

_FACE = (6.0, 16.0)
_BLOB_AMP = (0.65, 0.7, 0.7)    # face / left hand / right hand
_BLOB_SIGMA = 1.7
_EXPOSURE_STD = 0.04            # per-video lighting jitter, signer-independent


def _signer_style(signer: int) -> tuple[np.ndarray, float]:
    tint = _TINTS[signer % len(_TINTS)]
    size = 0.97 + 0.02 * (signer % 4)
    return tint, size


def _gloss_anchors(gloss: int, vocab_size: int, height: int, width: int):
    """Start/end hand positions; distinct screen regions per gloss id."""
    theta = 2.0 * np.pi * (gloss - 1) / vocab_size
    cx, cy = 0.62 * height, 0.5 * width
    r_big, r_small = 0.28 * height, 0.16 * height
    lh0 = (cx + r_big * np.cos(theta), cy + r_big * np.sin(theta))
    lh1 = (cx + r_small * np.cos(theta + 1.2), cy + r_small * np.sin(theta + 1.2))
    rh0 = (cx + r_big * np.cos(theta + np.pi), cy + r_big * np.sin(theta + np.pi))
    rh1 = (cx + r_small * np.cos(theta + np.pi - 1.2), cy + r_small * np.sin(theta + np.pi - 1.2))
    clip = lambda p: (
        float(np.clip(p[0], 1.5, height - 2.5)),
        float(np.clip(p[1], 1.5, width - 2.5)),
    )
    return clip(lh0), clip(lh1), clip(rh0), clip(rh1)


def _render_frame(centers: np.ndarray, base: np.ndarray, size: float,
                  height: int, width: int) -> np.ndarray:
    frame = np.empty((height, width, 3), dtype=np.float64)
    frame[:] = base
    rows = np.arange(height, dtype=np.float64)[:, None]
    cols = np.arange(width, dtype=np.float64)[None, :]
    sigma = _BLOB_SIGMA * size
    for ch, ((x, y), amp) in enumerate(zip(centers, _BLOB_AMP)):
        blob = amp * np.exp(-((rows - x) ** 2 + (cols - y) ** 2) / (2.0 * sigma ** 2))
        frame[:, :, ch] += blob
    return np.clip(frame, 0.0, 1.0)


def render_sentence(glosses, signer: int, spec: SynthSpec,
                    rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Render one sentence: (frames (T,H,W,3), keypoints (T,3,2))."""
    tint, size = _signer_style(signer)
    exposure = rng.normal(0.0, _EXPOSURE_STD, size=3)
    base = np.clip(0.12 + tint + exposure, 0.0, 0.34)
    frames = []
    points = []
    for g in glosses:
        lh0, lh1, rh0, rh1 = _gloss_anchors(g, spec.vocab_size, spec.height, spec.width)
        n = spec.frames_per_gloss_mean + int(
            rng.integers(-spec.frames_per_gloss_jitter, spec.frames_per_gloss_jitter + 1)
        )
        for t in range(n):
            frac = t / max(n - 1, 1)
            jitter = rng.normal(0.0, 0.25, size=(2, 2))
            lh = np.array(lh0) + frac * (np.array(lh1) - np.array(lh0)) + jitter[0]
            rh = np.array(rh0) + frac * (np.array(rh1) - np.array(rh0)) + jitter[1]
            lh = np.clip(lh, 0.0, [spec.height - 1, spec.width - 1])
            rh = np.clip(rh, 0.0, [spec.height - 1, spec.width - 1])
            centers = np.stack([np.array(_FACE), lh, rh])
            frames.append(_render_frame(centers, base, size, spec.height, spec.width))
            points.append(centers)
    return np.stack(frames), np.stack(points)


def synth_generate(spec: SynthSpec, out_dir) -> None:
    """Write a full synthetic dataset; a pure function of (spec, seed)."""
    out = Path(out_dir)
    (out / "videos").mkdir(parents=True, exist_ok=True)
    (out / "keypoints").mkdir(parents=True, exist_ok=True)

    vocab = [f"G{i:02d}" for i in range(1, spec.vocab_size + 1)]
    (out / "vocab.txt").write_text("\n".join(vocab) + "\n")

    rng = np.random.default_rng(spec.seed)
    if spec.split_mode == "si":
        train_pool = list(range(spec.train_signers))
        eval_pool = list(range(spec.train_signers, spec.n_signers))
    else:
        train_pool = eval_pool = list(range(spec.n_signers))

    label_lines = []
    counts = {"train": spec.train_sentences, "dev": spec.dev_sentences, "test": spec.test_sentences}
    for split, count in counts.items():
        pool = train_pool if split == "train" else eval_pool
        for i in range(count):
            sid = f"{split}_{i:04d}"
            n_gloss = int(rng.integers(spec.min_glosses, spec.max_glosses + 1))
            glosses = [int(g) for g in rng.integers(1, spec.vocab_size + 1, size=n_gloss)]
            signer = int(pool[rng.integers(0, len(pool))])
            frames, points = render_sentence(glosses, signer, spec, rng)
            write_tensor(out / "videos" / f"{sid}.slt", frames.astype(np.float32))
            write_keypoints(out / "keypoints" / f"{sid}.csv", points)
            gloss_str = " ".join(vocab[g - 1] for g in glosses)
            label_lines.append(f"{sid}\t{signer}\t{gloss_str}")
    (out / "labels.tsv").write_text("\n".join(label_lines) + "\n")

    echo = "\n".join(f"{k}={getattr(spec, k)}" for k in spec.__dataclass_fields__)
    (out / "config.txt").write_text(echo + "\n")


# ---------------------------------------------------------------------------
# dataset index

@dataclass
class SampleEntry:
    sample_id: str
    video_path: Path
    keypoint_path: Path
    signer: int
    glosses: list[int]

    @property
    def split(self) -> str:
        return self.sample_id.split("_", 1)[0]


@dataclass
class DatasetIndex:
    root: Path
    vocab: list[str]
    entries: list[SampleEntry]
    split_mode: str = "sd"
    gloss_to_id: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.gloss_to_id = {g: i + 1 for i, g in enumerate(self.vocab)}

    def split(self, name: str) -> list[SampleEntry]:
        return [e for e in self.entries if e.split == name]

    def signers(self, split: str) -> set[int]:
        return {e.signer for e in self.split(split)}


def load_dataset(root) -> DatasetIndex:
    root = Path(root)
    vocab = [l.strip() for l in (root / "vocab.txt").read_text().splitlines() if l.strip()]
    gloss_to_id = {g: i + 1 for i, g in enumerate(vocab)}
    entries = []
    for line in (root / "labels.tsv").read_text().splitlines():
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(f"labels.tsv: expected 3 tab-separated fields: {line!r}")
        sid, signer, glosses = parts
        ids = []
        for g in glosses.split():
            if g not in gloss_to_id:
                raise FormatError(f"labels.tsv: unknown gloss {g!r} in sample {sid}")
            ids.append(gloss_to_id[g])
        entries.append(SampleEntry(
            sample_id=sid,
            video_path=root / "videos" / f"{sid}.slt",
            keypoint_path=root / "keypoints" / f"{sid}.csv",
            signer=int(signer),
            glosses=ids,
        ))
    split_mode = "sd"
    cfg = root / "config.txt"
    if cfg.exists():
        for line in cfg.read_text().splitlines():
            if line.startswith("split_mode="):
                split_mode = line.split("=", 1)[1].strip()
    index = DatasetIndex(root=root, vocab=vocab, entries=entries, split_mode=split_mode)
    if split_mode == "si":
        overlap = index.signers("train") & (index.signers("dev") | index.signers("test"))
        if overlap:
            raise FormatError(f"signer-independent split shares signers {sorted(overlap)}")
    return index


def load_sample(entry: SampleEntry) -> tuple[np.ndarray, np.ndarray]:
    """Load (frames (T,H,W,3), keypoints (T,3,2)) for one entry."""
    frames = read_tensor(entry.video_path)
    points = read_keypoints(entry.keypoint_path)
    if frames.shape[0] != points.shape[0]:
        raise FormatError(f"{entry.sample_id}: frame/keypoint count mismatch")
    return frames, points


# ---------------------------------------------------------------------------
# frame-dropping augmentations (labels are never touched)

def sfd_train(frames: np.ndarray, keypoints: np.ndarray, p_drop: float,
              rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Drop floor(p*T) uniformly random frames; keypoints co-indexed."""
    if not 0 <= p_drop < 1:
        raise ValueError("dropping ratio must lie in [0, 1)")
    t = frames.shape[0]
    n_drop = int(p_drop * t)
    if n_drop >= t:
        raise ValueError("augmentation would drop every frame")
    if n_drop == 0:
        return frames, keypoints
    drop = rng.choice(t, size=n_drop, replace=False)
    keep = np.setdiff1d(np.arange(t), drop)
    return frames[keep], keypoints[keep]


def seg_and_drop(frames: np.ndarray, keypoints: np.ndarray,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Two-frame clips each lose one random frame, then a 40% random drop."""
    t = frames.shape[0]
    if t < 2:
        raise ValueError("seg-and-drop needs at least 2 frames")
    keep = []
    for start in range(0, t - 1, 2):
        keep.append(start + int(rng.integers(0, 2)))
    if t % 2:
        keep.append(t - 1)
    keep = np.asarray(keep)
    return sfd_train(frames[keep], keypoints[keep], 0.4, rng)


def sfd_infer(frames: np.ndarray, keypoints: np.ndarray,
              p_drop: float) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic test-time analog: drop indices floor(k/p) while in range."""
    if not 0 <= p_drop < 1:
        raise ValueError("dropping ratio must lie in [0, 1)")
    t = frames.shape[0]
    if p_drop == 0:
        return frames, keypoints
    drop = set()
    k = 0
    while True:
        idx = int(k / p_drop)
        if idx >= t:
            break
        drop.add(idx)
        k += 1
    keep = np.asarray([i for i in range(t) if i not in drop], dtype=np.int64)
    return frames[keep], keypoints[keep]
