"""Command-line entry point: ``latentood <command> [flags]``.

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .data import DOMAINS, DatasetSpec, make_synthetic_dataset
from .denoiser import load_checkpoint, save_checkpoint
from .geometry import LatentBank, geometry_report
from .metrics import diversity_score, interference_rate
from .pipeline import RunConfig, StageError, run_pipeline, subseed, train_or_load
from .sampler import RejectionConfig, generate_ood
from .schedule import NoiseSchedule
from .separability import SplitSpec, fit_linear, load_linear, save_linear
from .trajectory import default_target, denoise, invert, mae01, uniform_plan

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3


class ConfigError(ValueError):
    pass


def _load_config(args) -> RunConfig:
    raw = {}
    if args.config:
        try:
            raw = io.read_json(args.config)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out_dir is not None:
        raw["out_dir"] = args.out_dir
    for key in ("steps", "t_frac"):
        if getattr(args, key, None) is not None:
            raw[key] = getattr(args, key)
    try:
        return RunConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _require(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"missing input file: {p}")
    return p


def _plan(cfg: RunConfig):
    s = NoiseSchedule.from_dict(cfg.schedule)
    return s, uniform_plan(default_target(s.T, cfg.t_frac), cfg.steps)


def _images(cfg: RunConfig, domain: str, count: int, tag: str) -> np.ndarray:
    return make_synthetic_dataset(DatasetSpec(domain, count, subseed(cfg.seed, f"{tag}:{domain}"), cfg.image_size))


def _emit(obj, out: Path | None = None) -> None:
    if out is not None:
        io.write_json(out, obj)
    print(json.dumps(obj, sort_keys=True, indent=2))


def cmd_train(cfg: RunConfig, args) -> None:
    s = NoiseSchedule.from_dict(cfg.schedule)
    cfg = replace(cfg, model_path=None)
    p, history = train_or_load(cfg, s)
    out = Path(cfg.out_dir)
    save_checkpoint(out / "model.dnz", p)
    _emit({"model": str(out / "model.dnz"), "loss_history": history, "n_params": p.n_params}, out / "train.json")


def cmd_invert(cfg: RunConfig, args) -> None:
    s, plan = _plan(cfg)
    p = load_checkpoint(_require(args.model))
    imgs = _images(cfg, args.domain, args.count, "bank")
    lat = invert(imgs, p, s, plan).terminal
    path = Path(cfg.out_dir) / f"bank_{args.domain}.ldt"
    io.save_tensor(path, lat.reshape(len(lat), -1))
    _emit({"bank": str(path), "t": plan.target, "count": args.count, "per_dim_std": float(lat.reshape(len(lat), -1).std(0, ddof=1).mean())})


def cmd_reconstruct(cfg: RunConfig, args) -> None:
    s, plan = _plan(cfg)
    p = load_checkpoint(_require(args.model))
    imgs = _images(cfg, args.domain, args.count, "recon")
    lat = invert(imgs, p, s, plan).terminal
    rec = denoise(lat, p, s, plan, eta=args.eta, seed=subseed(cfg.seed, "reconstruct")).terminal
    out = Path(cfg.out_dir)
    io.save_tensor(out / f"recon_{args.domain}.ldt", rec)
    _emit({"domain": args.domain, "eta": args.eta, "t": plan.target, "steps": plan.S, "mae": float(mae01(imgs, rec))})


def cmd_geometry(cfg: RunConfig, args) -> None:
    bank = LatentBank(io.load_tensor(_require(args.bank)))
    ref = LatentBank(io.load_tensor(_require(args.ref_bank))) if args.ref_bank else None
    rep = geometry_report(bank, args.n_pairs, ref, seed=cfg.seed)
    _emit(rep.to_dict())


def cmd_separability(cfg: RunConfig, args) -> None:
    a = LatentBank(io.load_tensor(_require(args.bank_a)), "a")
    b = LatentBank(io.load_tensor(_require(args.bank_b)), "b")
    model, acc = fit_linear(a, b, SplitSpec(0.7, cfg.seed), seed=cfg.seed)
    path = Path(cfg.out_dir) / "linear.lsv"
    save_linear(path, model)
    _emit({"test_accuracy": acc, "train_accuracy": model.train_accuracy, "model": str(path)})


def _rejection_config(cfg: RunConfig, args) -> RejectionConfig:
    rc = RejectionConfig.from_dict(cfg.sampler)
    lo, hi = rc.lambda_range
    try:
        return replace(
            rc,
            omega_d=args.omega_d if args.omega_d is not None else rc.omega_d,
            omega_a=args.omega_a if args.omega_a is not None else rc.omega_a,
            n_ref=args.n_ref if args.n_ref is not None else rc.n_ref,
            lambda_range=(args.lambda_lo if args.lambda_lo is not None else lo, args.lambda_hi if args.lambda_hi is not None else hi),
            max_attempts=args.max_attempts if args.max_attempts is not None else rc.max_attempts,
            anti_interference=args.anti_interference or rc.anti_interference,
            seed=cfg.seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_sample(cfg: RunConfig, args) -> None:
    s, plan = _plan(cfg)
    p = load_checkpoint(_require(args.model))
    bank = LatentBank(io.load_tensor(_require(args.bank)))
    id_center = LatentBank(io.load_tensor(_require(args.id_bank))).mean() if args.id_bank else None
    rc = _rejection_config(cfg, args)
    gen = generate_ood(bank, p, s, plan, args.n, rc, id_center=id_center)
    out = Path(cfg.out_dir)
    io.save_tensor(out / "generated.ldt", gen.images)
    pgm = out / "generated_pgm"
    pgm.mkdir(exist_ok=True)
    for i, img in enumerate(gen.images):
        io.save_pgm(pgm / f"{i:03d}.pgm", img)
    io.write_json(out / "provenance.json", gen.provenance())
    _emit({"accepted": len(gen.images), "shortfall": gen.shortfall, "reference_distance": gen.d_o})


def cmd_evaluate(cfg: RunConfig, args) -> None:
    imgs = io.load_tensor(_require(args.images))
    if args.classifier:
        clf = load_linear(_require(args.classifier))
    else:
        split = SplitSpec(0.7, subseed(cfg.seed, "split"))
        a = _images(cfg, cfg.id_domain, cfg.n_bank, "bank")
        b = _images(cfg, cfg.ood_domain, cfg.n_bank, "bank")
        clf, _ = fit_linear(
            LatentBank(a.reshape(len(a), -1), cfg.id_domain),
            LatentBank(b.reshape(len(b), -1), cfg.ood_domain),
            split,
            seed=subseed(cfg.seed, "pixel_svm"),
        )
    report = {"n": int(len(imgs)), "interference_rate": interference_rate(imgs, clf)}
    if len(imgs) >= 2:
        report["mean_pairwise_diversity"] = diversity_score(imgs)[0]
    _emit(report)


def cmd_pipeline(cfg: RunConfig, args) -> None:
    if args.model:
        cfg = replace(cfg, model_path=str(_require(args.model)))
    report = run_pipeline(cfg)
    print(json.dumps({"out_dir": cfg.out_dir, "timings": report.timings}, sort_keys=True, indent=2))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir")
    common.add_argument("-v", "--verbose", action="store_true")

    plan = argparse.ArgumentParser(add_help=False)
    plan.add_argument("--steps", type=int)
    plan.add_argument("--t-frac", type=float)

    parser = argparse.ArgumentParser(prog="latentood", description="Toy OOD domain discovery with a small diffusion model.")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("train", parents=[common], help="train the toy denoiser on ID images")

    p = sub.add_parser("invert", parents=[common, plan], help="invert a synthetic domain into a latent bank")
    p.add_argument("--model", required=True)
    p.add_argument("--domain", choices=DOMAINS, default="stripes")
    p.add_argument("--count", type=int, default=500)

    p = sub.add_parser("reconstruct", parents=[common, plan], help="invert then denoise and report MAE")
    p.add_argument("--model", required=True)
    p.add_argument("--domain", choices=DOMAINS, default="stripes")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--eta", type=float, default=0.0)

    p = sub.add_parser("geometry", parents=[common], help="pairwise statistics of a latent bank")
    p.add_argument("--bank", required=True)
    p.add_argument("--ref-bank")
    p.add_argument("--n-pairs", type=int, default=1000)

    p = sub.add_parser("separability", parents=[common], help="linear probe between two banks")
    p.add_argument("--bank-a", required=True)
    p.add_argument("--bank-b", required=True)

    p = sub.add_parser("sample", parents=[common, plan], help="discover and denoise OOD latents")
    p.add_argument("--model", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--id-bank")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--omega-d", type=float)
    p.add_argument("--omega-a", type=float)
    p.add_argument("--n-ref", type=int)
    p.add_argument("--lambda-lo", type=float)
    p.add_argument("--lambda-hi", type=float)
    p.add_argument("--max-attempts", type=int)
    p.add_argument("--anti-interference", action="store_true")

    p = sub.add_parser("evaluate", parents=[common], help="interference and diversity of an image tensor")
    p.add_argument("--images", required=True)
    p.add_argument("--classifier", help="pixel classifier file; trained from config data if omitted")

    p = sub.add_parser("pipeline", parents=[common, plan], help="run every stage end to end")
    p.add_argument("--model", help="reuse a trained checkpoint")
    return parser


COMMANDS = {
    "train": cmd_train,
    "invert": cmd_invert,
    "reconstruct": cmd_reconstruct,
    "geometry": cmd_geometry,
    "separability": cmd_separability,
    "sample": cmd_sample,
    "evaluate": cmd_evaluate,
    "pipeline": cmd_pipeline,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except Exception as exc:
        print(f"error in {args.command}: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
