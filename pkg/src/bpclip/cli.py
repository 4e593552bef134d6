"""Command-line interface: train, eval, score, export-attn, verify.

Exit codes: 0 success, 2 usage/configuration errors, 3 runtime failures.
Config files are TOML (or JSON) with [model] and [train] sections; any
config key can be overridden with --section.key=value flags.
"""

from __future__ import annotations

import argparse
import json
import sys
import tempfile
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import verify as verify_mod
from .archive import ArchiveError
from .clip_head import load_text_bank
from .data import load_manifest, normalize_mos, split_dataset, SplitSpec, load_image, resize_shorter_side
from .errors import (BpclipError, ConfigurationError, DegenerateRangeError,
                     InputError, ManifestError, SplitError, TextBankError)
from .metrics import aggregate_reports
from .model import ModelConfig, QualityModel
from .train import TrainConfig, evaluate, load_checkpoint, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3


class UsageError(BpclipError):
    pass


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"no such config file: {path}")
    if path.suffix.lower() == ".json":
        return json.loads(path.read_text(encoding="utf-8"))
    with open(path, "rb") as f:
        return tomllib.load(f)


def apply_overrides(cfg: dict, overrides: list) -> dict:
    """Apply --section.key=value tokens; unknown keys are usage errors."""
    for token in overrides:
        if not token.startswith("--") or "=" not in token:
            raise UsageError(f"unrecognized argument {token!r} (overrides look like --train.lr=1e-3)")
        dotted, raw = token[2:].split("=", 1)
        parts = dotted.split(".")
        node = cfg
        for key in parts[:-1]:
            if not isinstance(node, dict) or key not in node:
                raise UsageError(f"override names unknown config section {dotted!r}")
            node = node[key]
        leaf = parts[-1]
        if not isinstance(node, dict) or leaf not in node:
            raise UsageError(f"override names unknown config key {dotted!r}")
        node[leaf] = _coerce(raw, node[leaf])
    return cfg


def _coerce(raw: str, current):
    if isinstance(current, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise UsageError(f"expected boolean, got {raw!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, (list, tuple)):
        return json.loads(raw)
    return raw


def build_configs(args, overrides) -> tuple:
    cfg = load_config_file(args.config)
    cfg.setdefault("model", {})
    cfg.setdefault("train", {})
    apply_overrides(cfg, overrides)
    if args.seed is not None:
        cfg["train"]["seed"] = args.seed
        cfg["model"]["seed"] = args.seed
    try:
        model_cfg = ModelConfig.from_dict(cfg["model"])
        train_cfg = TrainConfig(**cfg["train"])
    except TypeError as e:
        raise UsageError(f"bad config key: {e}") from e
    model_cfg = train_cfg.apply_ablations(model_cfg)
    return model_cfg, train_cfg


def cmd_train(args, overrides) -> int:
    model_cfg, train_cfg = build_configs(args, overrides)
    manifest = load_manifest(args.manifest)
    bank = load_text_bank(args.text_bank) if model_cfg.text_head else None
    model = QualityModel(model_cfg, bank)
    result = train(train_cfg, manifest, model, args.out_dir, log_every=args.log_every)
    print(f"trained {train_cfg.epochs} epochs ({result.steps} steps); "
          f"best val SRCC {result.best_val_srcc:.4f}")
    print(f"checkpoints under {args.out_dir}")
    return EXIT_OK


def cmd_eval(args, overrides) -> int:
    bank = load_text_bank(args.text_bank) if args.text_bank else None
    model = load_checkpoint(args.checkpoint, bank)
    manifest = normalize_mos(load_manifest(args.manifest))
    ratios = (6, 2, 2) if manifest.meta.mode == "FR" else (8, 2)
    reports = []
    for repeat in range(args.repeats):
        splits = split_dataset(manifest, SplitSpec(ratios=ratios, seed=args.seed or 0,
                                                   repeat_index=repeat))
        part = splits[args.split] if splits[args.split] is not None else splits["test"]
        reports.append(evaluate(model, part, batch_size=args.batch_size))
    report = reports[0] if len(reports) == 1 else aggregate_reports(reports)
    if args.json:
        print(json.dumps(report.to_dict()))
    else:
        std = "" if report.srcc_std is None else (
            f" +- {report.srcc_std:.4f} / {report.plcc_std:.4f} over {report.repeats} repeats")
        print(f"SRCC {report.srcc:.4f}  PLCC {report.plcc:.4f}  (n={report.count}){std}")
    return EXIT_OK


def _prepare_cli_image(path, model):
    img = load_image(path)
    h, w = model.config.backbone.input_size
    if img.shape[1] < h or img.shape[2] < w:
        img = resize_shorter_side(img, max(h, w))
    top = (img.shape[1] - h) // 2
    left = (img.shape[2] - w) // 2
    return img[None, :, top:top + h, left:left + w]


def cmd_score(args, overrides) -> int:
    bank = load_text_bank(args.text_bank) if args.text_bank else None
    model = load_checkpoint(args.checkpoint, bank)
    if model.config.mode == "FR" and not args.reference:
        raise UsageError("FR checkpoint requires --reference")
    if model.config.mode == "NR" and args.reference:
        raise UsageError("NR checkpoint forbids --reference")
    image = _prepare_cli_image(args.image, model)
    reference = _prepare_cli_image(args.reference, model) if args.reference else None
    from . import autograd as ag
    with ag.no_grad():
        out = model(image, reference)
    score = float(out["score"].data[0])
    sims = out["similarities"]
    if args.json:
        doc = {"score": score, "levels": len(out["projected"]),
               "similarities": (np.concatenate([s.data[0] for s in sims]).tolist()
                                if sims else None)}
        print(json.dumps(doc))
        return EXIT_OK
    print(f"score: {score:.4f}")
    if sims and model.text_bank is not None:
        mean_sim = np.mean([s.data[0] for s in sims], axis=0)
        print("top adjectives per dimension (mean over levels):")
        for name, adjs in model.text_bank.dimensions:
            idx = [model.text_bank.adjectives.index(a) for a in adjs]
            ranked = sorted(zip(adjs, mean_sim[idx]), key=lambda t: -t[1])[:3]
            row = ", ".join(f"{a} {v:.3f}" for a, v in ranked)
            print(f"  {name:>16}: {row}")
    return EXIT_OK


def cmd_export_attn(args, overrides) -> int:
    from .visualize import export_all_maps, export_attention_map
    bank = load_text_bank(args.text_bank) if args.text_bank else None
    model = load_checkpoint(args.checkpoint, bank)
    if model.config.mode == "FR" and not args.reference:
        raise UsageError("FR checkpoint requires --reference")
    image = _prepare_cli_image(args.image, model)
    reference = _prepare_cli_image(args.reference, model) if args.reference else None
    if args.level is not None or args.branch is not None:
        if args.level is None or args.branch is None:
            raise UsageError("--level and --branch go together")
        _, png = export_attention_map(args.level, args.branch, model, image,
                                      reference, args.out_dir)
        print(f"wrote {png}")
    else:
        written = export_all_maps(model, image, reference, args.out_dir)
        print(f"wrote {len(written)} maps + attention_maps.bpta under {args.out_dir}")
    return EXIT_OK


def cmd_verify(args, overrides) -> int:
    if args.fragment:
        report = verify_mod.gradient_check(args.fragment, seed=args.seed or 0)
        status = "PASS" if report.passed(verify_mod.GRAD_TOL) else "FAIL"
        print(f"{status}  {args.fragment}: max rel error {report.max_rel_error:.3e} "
              f"over {report.checked_entries} entries")
        return EXIT_OK if status == "PASS" else EXIT_RUNTIME
    with tempfile.TemporaryDirectory() as tmp:
        results = verify_mod.run_all(tmp)
    failed = [name for name, ok, _ in results if not ok]
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}")
        return EXIT_RUNTIME
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bpclip",
                                     description="Bottom-up multiscale image quality assessment")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a config + manifest")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--manifest", required=True)
    p_train.add_argument("--text-bank")
    p_train.add_argument("--out-dir", required=True)
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--log-every", type=int, default=1)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--text-bank")
    p_eval.add_argument("--split", choices=("train", "val", "test"), default="test")
    p_eval.add_argument("--repeats", type=int, default=1)
    p_eval.add_argument("--seed", type=int)
    p_eval.add_argument("--batch-size", type=int, default=8)
    p_eval.add_argument("--json", action="store_true")
    p_eval.set_defaults(func=cmd_eval)

    p_score = sub.add_parser("score", help="score one image (FR needs --reference)")
    p_score.add_argument("--image", required=True)
    p_score.add_argument("--reference")
    p_score.add_argument("--checkpoint", required=True)
    p_score.add_argument("--text-bank")
    p_score.add_argument("--json", action="store_true")
    p_score.set_defaults(func=cmd_score)

    p_attn = sub.add_parser("export-attn", help="export attention heatmaps")
    p_attn.add_argument("--checkpoint", required=True)
    p_attn.add_argument("--image", required=True)
    p_attn.add_argument("--reference")
    p_attn.add_argument("--text-bank")
    p_attn.add_argument("--out-dir", required=True)
    p_attn.add_argument("--level", type=int)
    p_attn.add_argument("--branch", choices=("info", "weight"))
    p_attn.set_defaults(func=cmd_export_attn)

    p_verify = sub.add_parser("verify", help="run the built-in invariant/oracle suite")
    p_verify.add_argument("--fragment", help="check one gradient fragment only")
    p_verify.add_argument("--seed", type=int)
    p_verify.set_defaults(func=cmd_verify)
    return parser


# configuration and input problems the user can fix -> exit 2;
# anything that failed mid-run -> exit 3
_USAGE_ERRORS = (UsageError, ConfigurationError, ManifestError, TextBankError,
                 ArchiveError, SplitError, DegenerateRangeError, InputError,
                 FileNotFoundError)


def main(argv=None) -> int:
    parser = build_parser()
    args, unknown = parser.parse_known_args(argv)
    overrides = list(unknown)
    if args.command != "train" and overrides:
        parser.error(f"unrecognized arguments: {' '.join(overrides)}")
    try:
        return args.func(args, overrides)
    except _USAGE_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except BpclipError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
