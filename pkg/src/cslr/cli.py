"""Command-line surface for scripted experiments.

Subcommands: synth, train, eval, wer, probe, bench. Every command is
deterministic given (config, seed, data). Exit codes: 0 success,
1 usage error, 2 data/format error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from cslr import bench as bench_mod
from cslr import config as cfg_mod
from cslr import data as data_mod
from cslr import train as train_mod
from cslr.data import FormatError
from cslr.metrics import corpus_wer, wer
from cslr.model import Model, ModelConfig
from cslr.sequential import compute_window_d

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors, not argparse's 2
        self.print_usage(sys.stderr)
        raise CliError(message, EXIT_USAGE)


def _load_config(path: str | None) -> dict:
    if path is None:
        return cfg_mod.default_config()
    try:
        return cfg_mod.parse_config(path)
    except FileNotFoundError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    except cfg_mod.ConfigError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc


def cmd_synth(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise CliError(f"{out} is not empty (use --force to overwrite)", EXIT_USAGE)
    spec = cfg_mod.synth_spec(cfg)
    data_mod.synth_generate(spec, out)
    cfg_mod.echo_config(cfg, out / "run_config.txt")
    print(f"wrote {spec.train_sentences + spec.dev_sentences + spec.test_sentences} "
          f"samples to {out}")
    return 0


def _build_model(cfg: dict, index: data_mod.DatasetIndex, seed: int) -> Model:
    train_entries = index.split("train")
    if not train_entries:
        raise CliError("dataset has no training split", EXIT_DATA)
    lengths = []
    t_max = 0
    for e in train_entries:
        t = data_mod.tensor_dims(e.video_path)[0]
        t_max = max(t_max, t)
        lengths.append((t, len(e.glosses)))
    if cfg["window_d"] == "auto":
        window = compute_window_d(lengths)
    else:
        window = float(cfg["window_d"])
    if cfg["t_max"]:
        t_max = cfg["t_max"]
    mc = cfg_mod.model_config(cfg, vocab_size=len(index.vocab),
                              n_signers=max(index.signers("train")) + 1,
                              t_max=t_max, window=window)
    return Model(mc, seed=seed)


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    if args.no_sac:
        cfg["sac"] = False
    if args.no_sec:
        cfg["sec"] = False
    if args.no_srm:
        cfg["srm"] = False
    if args.lam is not None:
        cfg["srm_lambda"] = args.lam
    if args.epochs is not None:
        cfg["epochs"] = args.epochs
    if args.seed is not None:
        cfg["seed"] = args.seed

    index = data_mod.load_dataset(args.data)
    model = _build_model(cfg, index, seed=cfg["seed"])
    tc = cfg_mod.train_config(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg_mod.echo_config(cfg, out / "run_config.txt")
    state = train_mod.fit(model, index, tc, out_dir=out, resume_from=args.resume)
    best = state.best_wer if np.isfinite(state.best_wer) else float("nan")
    print(f"trained {state.epoch} epochs ({state.step} steps), "
          f"best dev WER {100 * best:.2f}%, skipped {state.skipped} infeasible samples")
    return 0


def _load_model(ckpt_path) -> Model:
    arrays = train_mod.load_checkpoint(ckpt_path)
    model = Model(ModelConfig.from_arrays(arrays))
    model.load_state({k: v for k, v in arrays.items()
                      if not k.startswith(("adam.", "cfg.")) and k != "meta"})
    return model


def cmd_eval(args) -> int:
    index = data_mod.load_dataset(args.data)
    entries = index.split(args.split)
    if not entries:
        raise CliError(f"split {args.split!r} is empty", EXIT_DATA)
    model = _load_model(args.ckpt)
    wer_value, report = train_mod.evaluate(model, entries, index.vocab,
                                           beam_width=args.beam,
                                           p_drop=args.drop_ratio)
    for line in report:
        print(line)
    print(f"WER\t{100 * wer_value:.2f}")
    return 0


def cmd_wer(args) -> int:
    ref_lines = Path(args.ref).read_text().splitlines()
    hyp_lines = Path(args.hyp).read_text().splitlines()
    if len(ref_lines) != len(hyp_lines):
        raise CliError(
            f"line count mismatch: {len(ref_lines)} references vs {len(hyp_lines)} hypotheses",
            EXIT_DATA,
        )
    pairs = []
    for i, (ref, hyp) in enumerate(zip(ref_lines, hyp_lines)):
        r, h = ref.split(), hyp.split()
        if not r:
            raise CliError(f"line {i + 1}: empty reference", EXIT_DATA)
        pairs.append((r, h))
        print(f"{i + 1}\t{100 * wer(r, h):.2f}")
    print(f"WER\t{100 * corpus_wer(pairs):.2f}")
    return 0


def cmd_probe(args) -> int:
    index = data_mod.load_dataset(args.data)
    model = _load_model(args.ckpt)
    acc = train_mod.probe_signer_accuracy(model, index, split=args.split, seed=args.seed)
    print(f"probe_acc\t{acc:.4f}")
    return 0


def build_parser() -> Parser:
    parser = Parser(prog="cslr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-sac", action="store_true")
    p.add_argument("--no-sec", action="store_true")
    p.add_argument("--no-srm", action="store_true")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--from", dest="resume", default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--beam", type=int, default=10)
    p.add_argument("--drop-ratio", type=float, default=0.5)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("wer", help="score two line-aligned gloss files")
    p.add_argument("ref")
    p.add_argument("hyp")
    p.set_defaults(fn=cmd_wer)

    p = sub.add_parser("probe", help="signer-information probe on a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_probe)

    p = sub.add_parser("bench", help="benchmark kernel backends")
    p.set_defaults(fn=lambda args: (bench_mod.main(), 0)[1])

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (FormatError, cfg_mod.ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except train_mod.NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
