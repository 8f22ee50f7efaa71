"""``solarchip`` command line: gen-data, pretrain, eval.

Exit codes: 0 success, 2 usage error, 3 output collision (use --force),
4 missing input (archive or checkpoint), 5 non-finite loss.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import shutil
import sys
from pathlib import Path

import torch

from .data.labels import boundary_at_fraction, split_by_time
from .data.storage import load_archive, read_manifest, save_archive
from .data.synthetic import generate_archive
from .data.types import FlareClass
from .evaluation.metrics import SCORE_NAMES, class_accuracies, contingency, skill_scores
from .evaluation.protocols import (ABLATION_METRICS, FEW_SHOT_FRACTIONS, ablation_grid, downstream_data,
                                   dump_panels, few_shot, few_shot_summary, write_table)
from .evaluation.probes import run_translation_probe, train_probe, train_translation
from .runs import MANIFEST, RunConfig, RunManifest, apply_overrides, file_sha256, load_config
from .trainer import NonFiniteLoss, TrainState, fit, read_history, write_history

log = logging.getLogger("solarchip")

OUT_ENV = "SOLARCHIP_OUT"
EXIT_OK, EXIT_USAGE, EXIT_COLLISION, EXIT_MISSING, EXIT_NONFINITE = 0, 2, 3, 4, 5
EVAL_KINDS = ("probe", "fewshot", "ablate", "translate")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<command>, else ./runs/<command>)")
    common.add_argument("--force", action="store_true", help="replace an existing output directory")
    common.add_argument("--backbone", choices=("conv", "transformer"))
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="any config key")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="solarchip", description="Multi-granularity contrastive pretraining "
                                "on a synthetic multi-instrument solar archive.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="render a synthetic archive")
    g.add_argument("--count", type=int)
    g.add_argument("--side", type=int)

    t = sub.add_parser("pretrain", parents=[common], help="pretrain on an archive")
    t.add_argument("--archive", required=True)
    t.add_argument("--steps", type=int)
    for k in (1, 2, 3):
        t.add_argument(f"--lambda{k}", type=float)
    t.add_argument("--resume", help="checkpoint to continue from (output goes to its directory)")

    e = sub.add_parser("eval", parents=[common], help="downstream evaluation")
    e.add_argument("--kind", required=True, choices=EVAL_KINDS)
    e.add_argument("--archive", required=True)
    e.add_argument("--checkpoint", help="pretrained checkpoint (not needed for --kind ablate)")
    e.add_argument("--frozen", action="store_true", help="train only the probe head")
    e.add_argument("--steps", type=int, help="pretraining steps per ablation cell")
    for k in (1, 2, 3):
        e.add_argument(f"--lambda{k}", type=float)
    return p


def resolve_config(args) -> RunConfig:
    try:
        cfg = load_config(args.config)
        flags = {}
        for item in args.set:
            if "=" not in item:
                raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            flags[k.strip()] = v.strip()
        for name in ("seed", "count", "side", "lambda1", "lambda2", "lambda3"):
            if getattr(args, name, None) is not None:
                flags[name] = str(getattr(args, name))
        if getattr(args, "steps", None) is not None:
            flags["ablation_steps" if args.command == "eval" else "steps"] = str(args.steps)
        if getattr(args, "frozen", False):
            flags["frozen"] = "true"
        if args.backbone:
            flags["backbone.kind"] = args.backbone
        cfg = apply_overrides(cfg, flags)
        cfg.train_config()
    except FileNotFoundError as exc:
        raise CliError(f"config file not found: {exc.filename}", EXIT_USAGE) from exc
    except (KeyError, ValueError) as exc:
        raise CliError(f"bad configuration: {exc}", EXIT_USAGE) from exc
    if cfg.count < 1:
        raise CliError(f"--count must be >= 1, got {cfg.count}", EXIT_USAGE)
    if cfg.steps < 0 or cfg.ablation_steps < 0:
        raise CliError("--steps must be >= 0", EXIT_USAGE)
    if not 0 < cfg.train_fraction < 1:
        raise CliError("train_fraction must lie in (0, 1)", EXIT_USAGE)
    return cfg


def output_dir(args, default_name: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUT_ENV, "runs")) / default_name


def claim_output(out: Path, force: bool) -> None:
    """Create an empty output directory; an existing non-empty one needs --force and a manifest."""
    if out.exists() and (not out.is_dir() or any(out.iterdir())):
        if not force:
            raise CliError(f"output {out} already exists (use --force to replace it)", EXIT_COLLISION)
        if not (out / MANIFEST).exists():
            raise CliError(f"refusing to replace {out}: it holds no {MANIFEST}", EXIT_COLLISION)
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)


def need(path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise CliError(f"missing {what}: {path}", EXIT_MISSING)
    return path


def open_archive(path, cfg: RunConfig):
    """The archive plus the config with ``side`` taken from the archive's grids."""
    path = need(path, "archive")
    need(path / MANIFEST, "archive manifest")
    archive = load_archive(path)
    if not len(archive):
        raise CliError(f"archive {path} is empty", EXIT_MISSING)
    return archive, dataclasses.replace(cfg, side=archive[0].side)


def cmd_gen_data(args, cfg: RunConfig) -> int:
    out = output_dir(args, "archive")
    claim_output(out, args.force)
    run = RunManifest("gen-data", cfg.hash(), cfg.seed, out)
    run.write()
    archive = generate_archive(cfg.seed, cfg.count, cfg.side)
    archive.meta.update(run.entries())
    save_archive(archive, out)
    meta = read_manifest(out / MANIFEST)
    run.extra = {k: v for k, v in meta.items() if k not in run.entries()}
    outputs = [out / n for n in ("labels.csv", "latent.csv", "events.csv", "grids")]
    run.finalize(outputs)
    print(f"wrote {len(archive)} samples (side {cfg.side}) to {out}")
    return EXIT_OK


def _truncate_history(path: Path, step: int) -> None:
    if not path.exists():
        return
    rows = read_history(path)
    lines = path.read_text().splitlines(keepends=True)
    keep = [lines[0]] + [line for line, r in zip(lines[1:], rows) if int(r["step"]) <= step]
    path.write_text("".join(keep))


def cmd_pretrain(args, cfg: RunConfig) -> int:
    archive_dir = need(args.archive, "archive")
    archive, cfg = open_archive(archive_dir, cfg)
    train, _ = split_by_time(archive, boundary_at_fraction(archive, cfg.train_fraction))
    state = None
    if args.resume:
        ckpt = need(args.resume, "checkpoint")
        state = TrainState.load(ckpt)
        out = Path(args.out) if args.out else ckpt.parent
        tcfg = state.config.replace(steps=cfg.steps)
        state.config = tcfg
        out.mkdir(parents=True, exist_ok=True)
        _truncate_history(out / "loss.csv", state.step)
    else:
        out = output_dir(args, "pretrain")
        claim_output(out, args.force)
        tcfg = cfg.train_config()
    run = RunManifest("pretrain", cfg.hash(), cfg.seed, out,
                      extra={"archive": str(archive_dir), "archive_manifest_sha256": file_sha256(archive_dir / MANIFEST),
                             "resumed_from": str(args.resume or "")})
    run.write()
    first = (state.step if state is not None else 0) + 1
    try:
        state, history = fit(tcfg, train, out, state)
    except NonFiniteLoss as exc:
        raise CliError(str(exc), EXIT_NONFINITE) from exc
    write_history(out / "loss.csv", history, first_step=first, append=bool(args.resume))
    if history:
        r = history[-1]
        print(f"step {state.step}: total {r.total:.6g} rec {r.rec:.6g} cls {r.cls:.6g} pat {r.pat:.6g} "
              f"int {r.int:.6g} alphas {r.temperatures}")
    run.finalize(sorted(out.glob("*.npz")) + [out / "loss.csv"])
    return EXIT_OK


def _checkpoint_model(args):
    if not args.checkpoint:
        raise CliError(f"--checkpoint is required for --kind {args.kind}", EXIT_USAGE)
    ckpt = need(args.checkpoint, "checkpoint")
    state = TrainState.load(ckpt)
    manifest = ckpt.parent / MANIFEST
    return state.model, str(ckpt), file_sha256(manifest) if manifest.exists() else ""


def _probe_rows(clf, data) -> list[dict]:
    preds = clf.predict(data.labeled_test[:, 0])
    truth = data.test_labels
    rows = []
    for thr in (FlareClass.M, FlareClass.C):
        t = contingency(preds, truth, thr)
        rows.append({"target": f">={thr.letter}", "TP": t.TP, "FP": t.FP, "FN": t.FN, "TN": t.TN,
                     **skill_scores(t)})
    rows.append({"target": "ALL", "n": len(truth), "ACC": class_accuracies(preds, truth)["ALL"]})
    return rows


def cmd_eval(args, cfg: RunConfig) -> int:
    archive_dir = need(args.archive, "archive")
    archive, cfg = open_archive(archive_dir, cfg)
    model = ckpt = ckpt_hash = None
    if args.kind != "ablate":
        model, ckpt, ckpt_hash = _checkpoint_model(args)
    out = output_dir(args, f"eval-{args.kind}")
    claim_output(out, args.force)
    run = RunManifest(f"eval {args.kind}", cfg.hash(), cfg.seed, out,
                      extra={"archive": str(archive_dir), "archive_manifest_sha256": file_sha256(archive_dir / MANIFEST),
                             "checkpoint": ckpt or "", "checkpoint_manifest_sha256": ckpt_hash or ""})
    run.write()
    torch.set_num_threads(1)
    train, test = split_by_time(archive, boundary_at_fraction(archive, cfg.train_fraction))
    data = downstream_data(train, test, cfg.seed)
    outputs = []
    if args.kind == "probe":
        clf = train_probe(model, data.labeled_train[:, 0], data.train_labels, frozen=cfg.frozen,
                          steps=None if cfg.frozen else cfg.probe_steps, seed=cfg.seed)
        rows = _probe_rows(clf, data)
        cols = ["target", "n", "TP", "FP", "FN", "TN", *SCORE_NAMES]
        outputs.append(write_table(out / "probe.csv", rows, cols))
    elif args.kind == "fewshot":
        rows = few_shot(model, data, FEW_SHOT_FRACTIONS, tuple(range(cfg.fewshot_seeds)), frozen=cfg.frozen,
                        steps=None if cfg.frozen else cfg.probe_steps)
        outputs.append(write_table(out / "fewshot.csv", rows,
                                   ["seed", "fraction", "arm", "n_train", "ALL_ACC", "GE_M_ACC", "GE_C_ACC"]))
        summary = few_shot_summary(rows)
        srows = [{"fraction": f, "arm": a, "median_ALL_ACC": v} for (f, a), v in sorted(summary.items(), reverse=True)]
        outputs.append(write_table(out / "fewshot_summary.csv", srows))
    elif args.kind == "translate":
        rows = run_translation_probe(model, data.train_images, data.test_images, cfg.ridge)
        outputs.append(write_table(out / "translation.csv", rows, ["direction", "modality", "MSE", "PSNR", "SSIM"]))
        if cfg.dump_images > 0:
            n = cfg.dump_images
            for src, tgt, stem in ((0, 1, "hmi_to_0094"), (1, 0, "0094_to_hmi")):
                probe = train_translation(model, data.train_images, src, tgt, cfg.ridge)
                pred = probe.predict(model, data.test_images[:n])
                outputs += dump_panels(out / "images", pred, data.test_images[:n, tgt], stem)
    else:
        base = cfg.train_config(steps=cfg.ablation_steps, checkpoint_every=0)
        rows = ablation_grid(base, data, seeds=tuple(range(cfg.ablation_seeds)), ridge=cfg.ridge,
                             on_cell=lambda k, n, s, c: log.info("ablation %s/%s seed %d: %s", k, n, s, c))
        cols = ["backbone", "config", "rec", "lambda1", "lambda2", "lambda3", "n_seeds"]
        cols += [f"{m}_{s}" for m in ABLATION_METRICS for s in ("mean", "sd")]
        outputs.append(write_table(out / "ablation.csv", rows, cols))
    run.finalize(outputs)
    print(f"eval {args.kind}: wrote {', '.join(str(p) for p in outputs if p.suffix == '.csv')}")
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "pretrain": cmd_pretrain, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except CliError as exc:
        print(f"solarchip: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
