"""Command-line entry point.

Commands: train, eval, sample, gradcheck. Configuration is a JSON file
with sections model / train / data / eval / io; unknown keys are
rejected, and every run writes back the fully resolved effective config
next to its primary output for provenance.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import sampler as sampler_mod
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    NumericError,
    ProtocolError,
    ShapeError,
)
from .evaluate import evaluate_protocol, model_score_fn
from .nn import ContrastNet, ModelSpec, contrast_loss, episode_labels
from .tensor import grad_check
from .train import TrainConfig, init_params, load_checkpoint, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_DEFAULTS = {
    "model": {"depth_n": 1, "n_candidates": 20, "image_size": 28, "embed_dim": 64},
    "train": {
        "n_contexts": 40,
        "lr0": 0.1,
        "momentum": 0.9,
        "decay1": 44800,
        "decay2": 51200,
        "max_steps": 57600,
        "seed": 0,
        "checkpoint_every": 0,
    },
    "data": {"root": None, "synth": None, "split": {"kind": "full"}, "augment": False},
    "eval": {"protocol": "variant", "runs": 100, "n_shot": 1, "manifest": None, "base_seed": 0},
    "io": {"checkpoint": None, "trace": None, "report": None},
}
_SPLIT_KEYS = {"kind", "n", "categories", "groups"}
_SYNTH_KEYS = {"classes", "samples", "size", "seed"}


def load_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} not found")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{p}: config must be a JSON object")
    cfg = {}
    for section, defaults in _DEFAULTS.items():
        given = raw.pop(section, {})
        if not isinstance(given, dict):
            raise ConfigError(f"section {section!r} must be an object")
        unknown = set(given) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
        cfg[section] = {**defaults, **given}
    if raw:
        raise ConfigError(f"unknown config sections: {sorted(raw)}")
    split = cfg["data"]["split"]
    if split is not None and set(split) - _SPLIT_KEYS:
        raise ConfigError(f"unknown split keys: {sorted(set(split) - _SPLIT_KEYS)}")
    synth = cfg["data"]["synth"]
    if synth is not None and set(synth) - _SYNTH_KEYS:
        raise ConfigError(f"unknown synth keys: {sorted(set(synth) - _SYNTH_KEYS)}")
    return cfg


def write_effective_config(cfg: dict, anchor_path) -> None:
    out = Path(str(anchor_path) + ".effective.json")
    out.write_text(json.dumps(cfg, sort_keys=True, indent=2) + "\n")


def build_dataset(data_cfg: dict) -> data_mod.Dataset:
    synth = data_cfg.get("synth")
    root = data_cfg.get("root")
    if synth and root:
        raise ConfigError("specify either data.root or data.synth, not both")
    if synth:
        ds = data_mod.synth_glyphs(
            num_classes=int(synth.get("classes", 30)),
            k=int(synth.get("samples", 20)),
            size=int(synth.get("size", 28)),
            seed=int(synth.get("seed", 0)),
        )
    elif root:
        ds = data_mod.load_image_dataset(root)
    else:
        raise ConfigError("data section needs either root or synth")
    split = data_cfg.get("split") or {"kind": "full"}
    spec = data_mod.SplitSpec(
        kind=split.get("kind", "full"),
        n=split.get("n"),
        categories=tuple(split.get("categories", ())),
        groups=tuple(split.get("groups", ())),
    )
    ds = data_mod.split_background(ds, spec)
    if data_cfg.get("augment"):
        ds = data_mod.augment_rotations(ds)
    return ds


def model_spec_from(cfg: dict) -> ModelSpec:
    m = cfg["model"]
    return ModelSpec(
        depth_n=int(m["depth_n"]),
        image_size=int(m["image_size"]),
        n_candidates=int(m["n_candidates"]),
        embed_dim=int(m["embed_dim"]),
    )


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    spec = model_spec_from(cfg)
    t = cfg["train"]
    io = cfg["io"]
    if not io["checkpoint"]:
        raise ConfigError("train needs io.checkpoint")
    tc = TrainConfig(
        n_contexts=int(t["n_contexts"]),
        lr0=float(t["lr0"]),
        momentum=float(t["momentum"]),
        decay1=int(t["decay1"]),
        decay2=int(t["decay2"]),
        max_steps=int(t["max_steps"]),
        seed=int(t["seed"]),
        checkpoint_every=int(t["checkpoint_every"]),
        checkpoint_path=io["checkpoint"],
        trace_path=io["trace"],
    )
    dataset = build_dataset(cfg["data"])
    write_effective_config(cfg, io["checkpoint"])
    result = train(tc, spec, dataset, log_every=args.log_every)
    print(f"trained {tc.max_steps} steps; final loss {result.trace[-1][2]:.5f}")
    print(f"checkpoint written to {io['checkpoint']}")
    return EXIT_OK


class _OracleStub:
    """Scores the true answer 0 and everything else 1; harness testing only."""

    def __init__(self, invert=False):
        self.invert = invert

    def score(self, ctx):
        a = np.ones(ctx.n_candidates)
        a[ctx.answer_index] = 0.0
        return 1.0 - a if self.invert else a


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    if args.checkpoint:
        cfg["io"]["checkpoint"] = args.checkpoint
    e = cfg["eval"]
    io = cfg["io"]
    if not io["report"]:
        raise ConfigError("eval needs io.report")
    dataset = build_dataset(cfg["data"])
    n_shot = int(e["n_shot"])

    if args.oracle_stub:
        score_fn = _OracleStub().score
        n_candidates = int(cfg["model"]["n_candidates"])
    else:
        if not io["checkpoint"]:
            raise ConfigError("eval needs io.checkpoint (or --oracle-stub)")
        model, _meta = load_checkpoint(io["checkpoint"])
        n_candidates = model.spec.n_candidates
        score_fn = model_score_fn(model, dataset)

    if e["protocol"] == "bpl":
        if not e["manifest"]:
            raise ConfigError("bpl protocol needs eval.manifest")
        fixed = data_mod.load_bpl_trials(e["manifest"])
        report = evaluate_protocol(
            score_fn, "bpl", n_candidates, 1, fixed_trials=fixed
        )
    else:
        report = evaluate_protocol(
            score_fn,
            "variant",
            n_candidates,
            n_shot,
            runs=int(e["runs"]),
            testset=dataset,
            base_seed=int(e["base_seed"]),
        )
    Path(io["report"]).write_text(report.to_json())
    write_effective_config(cfg, io["report"])
    print(report.to_table(), end="")
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg = load_config(args.config)
    dataset = build_dataset(cfg["data"])
    n_candidates = int(cfg["model"]["n_candidates"])
    n_shot = int(cfg["eval"]["n_shot"])
    rng = sampler_mod.rng_stream(args.seed)
    contexts = []
    for _ in range(args.count):
        if n_shot == 1:
            contexts.append(sampler_mod.generate_context(dataset, n_candidates, rng))
        else:
            contexts.append(
                sampler_mod.generate_fewshot_context(dataset, n_candidates, n_shot, rng)
            )
    sampler_mod.save_manifest(contexts, args.out)
    write_effective_config(cfg, args.out)
    print(f"wrote {len(contexts)} trials to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    # Small fixed geometry, 64-bit regardless of any config: finite
    # differences are meaningless in float32 and slow at full size.
    spec = ModelSpec(depth_n=1, image_size=8, n_candidates=3)
    params = init_params(spec, seed=args.seed, dtype=np.float64)
    model = ContrastNet(spec, params)
    rng = np.random.default_rng(args.seed)
    pairs = rng.uniform(0.0, 1.0, size=(spec.n_candidates, 2, 8, 8))
    labels = np.array([[0.0, 1.0, 1.0]])

    def forward():
        acts = model.forward_pairs(pairs, n_contexts=1, train=True)
        return contrast_loss(acts, labels)

    tensors = list(params.tensors.values())
    err = grad_check(forward, tensors, h=1e-5, max_coords=args.coords, rng=rng)
    if args.corrupt:
        err += 1.0  # test hook: simulate a broken backward pass
    print(f"gradcheck max relative error: {err:.3e} (threshold 1e-4)")
    return EXIT_OK if err < 1e-4 else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lclnet")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a JSON config")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--log-every", type=int, default=0)
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--checkpoint", help="overrides io.checkpoint")
    p_eval.add_argument("--oracle-stub", action="store_true", help=argparse.SUPPRESS)
    p_eval.set_defaults(fn=cmd_eval)

    p_sample = sub.add_parser("sample", help="emit a trial manifest")
    p_sample.add_argument("--config", required=True)
    p_sample.add_argument("--count", type=int, required=True)
    p_sample.add_argument("--out", required=True)
    p_sample.add_argument("--seed", type=int, default=0)
    p_sample.set_defaults(fn=cmd_sample)

    p_gc = sub.add_parser("gradcheck", help="finite-difference check of the backward pass")
    p_gc.add_argument("--config", help="accepted for symmetry; geometry is forced small")
    p_gc.add_argument("--seed", type=int, default=0)
    p_gc.add_argument("--coords", type=int, default=200)
    p_gc.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p_gc.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    if os.environ.get("LCLNET_VERBOSE"):
        print(f"lclnet argv: {argv if argv is not None else sys.argv[1:]}", file=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ProtocolError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, ShapeError, ContractError) as exc:
        print(f"numeric/contract error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
