"""End-to-end toy experiment: train, invert, measure, sample, denoise, evaluate.

Every artifact is a function of :class:`RunConfig`; wall-clock timings are kept
in a separate file so the report itself is reproducible byte for byte.
"""

from __future__ import annotations

import logging
import math
import time
import zlib
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import io
from .data import DOMAINS, DatasetSpec, make_synthetic_dataset
from .denoiser import Architecture, TrainConfig, init_denoiser, load_checkpoint, save_checkpoint, train_denoiser
from .geometry import LatentBank, annulus_fraction, center_distance, geometry_report, separation_threshold
from .metrics import diversity_score, interference_rate
from .sampler import (
    RejectionConfig,
    acceptance_rate,
    estimate_gaussian,
    generate_ood,
    sample_vanilla_gaussian,
)
from .schedule import NoiseSchedule, toy_schedule
from .separability import SplitSpec, fit_linear, save_linear
from .trajectory import default_target, denoise, invert, mae01, uniform_plan

log = logging.getLogger(__name__)

# rejection rate quoted for full-resolution latents; recorded for comparison only
REFERENCE_REJECTION_RATE = 0.8444


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


def subseed(seed: int, name: str) -> int:
    """Independent, stable seed for a named pipeline component."""
    return int(np.random.SeedSequence([seed, zlib.crc32(name.encode())]).generate_state(1)[0])


@dataclass
class RunConfig:
    out_dir: str = "runs/toy"
    seed: int = 0
    model_path: str | None = None
    schedule: dict = field(default_factory=lambda: toy_schedule(200).to_dict())
    arch: dict = field(default_factory=lambda: Architecture().to_dict())
    train: dict = field(default_factory=lambda: {"epochs": 30, "batch_size": 64, "learning_rate": 1e-3})
    image_size: tuple[int, int] = (16, 16)
    id_domain: str = "disks"
    ood_domain: str = "stripes"
    n_train: int = 2000
    n_bank: int = 500
    n_recon: int = 100
    recon_domains: tuple[str, ...] = DOMAINS
    steps: int = 60
    t_frac: float = 0.8
    n_pairs: int = 1000
    n_generate: int = 64
    n_rate_candidates: int = 1000
    sampler: dict = field(default_factory=lambda: RejectionConfig(max_attempts=20_000).to_dict())
    sweep_t_fracs: tuple[float, ...] = (0.4, 0.6, 0.8)
    sweep_etas: tuple[float, ...] = (0.0, 0.5, 1.0)
    n_sweep: int = 16

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        for k in ("image_size", "recon_domains", "sweep_t_fracs", "sweep_etas"):
            if k in d:
                d[k] = tuple(d[k])
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        for dom in (self.id_domain, self.ood_domain, *self.recon_domains):
            if dom not in DOMAINS:
                raise ValueError(f"unknown domain {dom!r}")
        if self.id_domain == self.ood_domain:
            raise ValueError("ID and OOD domains must differ")
        if not 0 < self.t_frac <= 1:
            raise ValueError("t_frac must lie in (0, 1]")
        if min(self.n_train, self.n_bank, self.steps, self.n_pairs) < 1 or self.n_bank < 10:
            raise ValueError("counts must be positive and n_bank >= 10")
        NoiseSchedule.from_dict(self.schedule)
        Architecture.from_dict(self.arch)
        TrainConfig(**self.train)
        RejectionConfig.from_dict(self.sampler)


@dataclass
class EvalReport:
    body: dict
    timings: dict

    def to_dict(self) -> dict:
        return self.body


class _Timer:
    def __init__(self):
        self.timings: dict[str, float] = {}

    @contextmanager
    def stage(self, name: str):
        start = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc
        finally:
            self.timings[name] = round(time.perf_counter() - start, 3)
        log.info("stage %s done in %.1fs", name, self.timings[name])


def _dataset(cfg: RunConfig, domain: str, count: int, tag: str) -> np.ndarray:
    return make_synthetic_dataset(DatasetSpec(domain, count, subseed(cfg.seed, f"{tag}:{domain}"), cfg.image_size))


def _flat(x: np.ndarray) -> np.ndarray:
    return x.reshape(x.shape[0], -1)


def _dump_images(dirpath: Path, images: np.ndarray, limit: int = 16) -> None:
    dirpath.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(images[:limit]):
        io.save_pgm(dirpath / f"{i:03d}.pgm", img)


def train_or_load(cfg: RunConfig, s: NoiseSchedule):
    arch = Architecture.from_dict(cfg.arch)
    if cfg.model_path and Path(cfg.model_path).exists():
        p = load_checkpoint(cfg.model_path)
        if p.arch != arch:
            raise ValueError(f"checkpoint architecture {p.arch} differs from config {arch}")
        return p, []
    data = _dataset(cfg, cfg.id_domain, cfg.n_train, "train")
    tcfg = TrainConfig(seed=subseed(cfg.seed, "train"), **cfg.train)
    return train_denoiser(init_denoiser(arch, subseed(cfg.seed, "init")), data, s, tcfg)


def run_pipeline(cfg: RunConfig) -> EvalReport:
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "config.json", cfg.to_dict())
    timer = _Timer()
    # the output location is not part of the experiment
    body: dict = {"config": {k: v for k, v in cfg.to_dict().items() if k != "out_dir"}}

    s = NoiseSchedule.from_dict(cfg.schedule)
    t = default_target(s.T, cfg.t_frac)
    plan = uniform_plan(t, cfg.steps)
    full_plan = uniform_plan(s.T, cfg.steps)
    a_t = s.abar(t)
    body["latent_step"] = {"t": t, "T": s.T, "alpha_bar": a_t, "plan_steps": plan.S}

    with timer.stage("train"):
        p, history = train_or_load(cfg, s)
        save_checkpoint(out / "model.dnz", p)
        body["train"] = {"loss_history": history, "n_params": p.n_params}

    with timer.stage("invert"):
        id_imgs = _dataset(cfg, cfg.id_domain, cfg.n_bank, "bank")
        ood_imgs = _dataset(cfg, cfg.ood_domain, cfg.n_bank, "bank")
        id_lat = invert(id_imgs, p, s, plan).terminal
        ood_lat = invert(ood_imgs, p, s, plan).terminal
        io.save_tensor(out / f"bank_{cfg.id_domain}.ldt", _flat(id_lat))
        io.save_tensor(out / f"bank_{cfg.ood_domain}.ldt", _flat(ood_lat))
        # banks are analysed at the precision they are stored with
        id_bank = LatentBank(io.load_tensor(out / f"bank_{cfg.id_domain}.ldt"), cfg.id_domain, t)
        ood_bank = LatentBank(io.load_tensor(out / f"bank_{cfg.ood_domain}.ldt"), cfg.ood_domain, t)

    with timer.stage("geometry"):
        target_std = math.sqrt(1.0 - a_t)
        banks = {}
        for bank, other in ((id_bank, ood_bank), (ood_bank, id_bank)):
            rep = geometry_report(bank, cfg.n_pairs, other, seed=subseed(cfg.seed, "geometry"))
            per_dim = bank.vectors.std(axis=0, ddof=1)
            banks[bank.domain_label] = {
                "geometry": rep.to_dict(),
                "per_dim_std_mean": float(per_dim.mean()),
                "per_dim_std_ratio": float(per_dim.mean() / target_std),
                "annulus_fraction_c3": annulus_fraction(bank, 3.0, math.sqrt(estimate_gaussian(bank).var)),
            }
        body["banks"] = banks
        body["marginal_std"] = target_std
        body["separation_threshold"] = separation_threshold(id_bank.d)

    with timer.stage("separability"):
        split = SplitSpec(0.7, subseed(cfg.seed, "split"))
        latent_clf, latent_acc = fit_linear(ood_bank, id_bank, split, seed=subseed(cfg.seed, "svm"))
        for rep in banks.values():
            rep["geometry"]["clf_acc"] = latent_acc
        save_linear(out / "latent_clf.lsv", latent_clf)
        pix_clf, pix_acc = fit_linear(
            LatentBank(_flat(id_imgs), cfg.id_domain),
            LatentBank(_flat(ood_imgs), cfg.ood_domain),
            split,
            seed=subseed(cfg.seed, "pixel_svm"),
        )
        save_linear(out / "pixel_clf.lsv", pix_clf)
        body["separability"] = {
            "latent_test_accuracy": latent_acc,
            "pixel_test_accuracy": pix_acc,
            "center_distance": center_distance(id_bank, ood_bank),
        }

    with timer.stage("reconstruct"):
        recon = {}
        for dom in cfg.recon_domains:
            imgs = _dataset(cfg, dom, cfg.n_recon, "recon")
            lat = invert(imgs, p, s, plan).terminal
            rec0 = denoise(lat, p, s, plan, eta=0.0).terminal
            rec1 = denoise(lat, p, s, plan, eta=1.0, seed=subseed(cfg.seed, f"eta1:{dom}")).terminal
            recon[dom] = {"mae_eta0": float(mae01(imgs, rec0)), "mae_eta1": float(mae01(imgs, rec1))}
        body["reconstruction"] = recon
        sweep_imgs = _dataset(cfg, cfg.ood_domain, cfg.n_sweep, "sweep")
        t_list = [default_target(s.T, f) for f in cfg.sweep_t_fracs]
        grid = []
        for tt in t_list:
            sweep_plan = uniform_plan(tt, cfg.steps)
            lat = invert(sweep_imgs, p, s, sweep_plan).terminal
            grid.append([
                float(mae01(sweep_imgs, denoise(lat, p, s, sweep_plan, eta=e, seed=subseed(cfg.seed, "sweep")).terminal))
                for e in cfg.sweep_etas
            ])
        body["eta_sweep"] = {"t": t_list, "eta": list(cfg.sweep_etas), "mae": grid}

    with timer.stage("sample"):
        rcfg = RejectionConfig.from_dict(cfg.sampler)
        rcfg = replace(rcfg, seed=subseed(cfg.seed, f"sampler:{rcfg.seed}"))
        est = estimate_gaussian(ood_bank)
        gen = generate_ood(ood_bank, p, s, plan, cfg.n_generate, rcfg, id_center=id_bank.mean(), est=est)
        io.save_tensor(out / "generated.ldt", gen.images)
        _dump_images(out / "generated_pgm", gen.images)
        io.write_json(out / "provenance.json", gen.provenance())
        acc_rate = acceptance_rate(ood_bank, est, rcfg, cfg.n_rate_candidates, gen.d_o, id_bank.mean())

        rng = np.random.default_rng(subseed(cfg.seed, "baseline"))
        x_T = rng.standard_normal((cfg.n_generate, *cfg.image_size))
        baseline = denoise(x_T, p, s, full_plan, eta=0.0).terminal
        io.save_tensor(out / "baseline.ldt", baseline)
        vanilla_lat = sample_vanilla_gaussian(est, cfg.n_generate, subseed(cfg.seed, "vanilla"))
        vanilla = denoise(vanilla_lat.reshape(-1, *cfg.image_size), p, s, plan, eta=0.0).terminal
        io.save_tensor(out / "vanilla.ldt", vanilla)
        body["sampling"] = {
            "estimate_var": est.var,
            "reference_distance": gen.d_o,
            "angle_tolerance": rcfg.angle_tolerance(ood_bank.d),
            "accepted": len(gen.images),
            "shortfall": gen.shortfall,
            "mean_attempts": float(np.mean([r.attempts for r in gen.results])) if gen.results else 0.0,
            "acceptance_rate": acc_rate,
            "rejection_rate": 1.0 - acc_rate,
            "reference_rejection_rate": REFERENCE_REJECTION_RATE,
        }

    with timer.stage("evaluate"):
        ev = {
            "interference_baseline": interference_rate(baseline, pix_clf),
            "interference_vanilla_gaussian": interference_rate(vanilla, pix_clf),
            "interference_id_train": interference_rate(id_imgs, pix_clf),
            "interference_ood_train": interference_rate(ood_imgs, pix_clf),
        }
        if len(gen.images):
            ev["interference_pipeline"] = interference_rate(gen.images, pix_clf)
        if len(gen.images) >= 2:
            refs = np.stack([ood_imgs[r.ref_index] for r in gen.results if r.accepted])
            pairwise, to_ref = diversity_score(gen.images, refs)
            ev["diversity_pipeline"] = {"mean_pairwise": pairwise, "mean_to_reference": to_ref}
        ev["diversity_ood_train"] = {"mean_pairwise": diversity_score(ood_imgs)[0]}
        body["evaluation"] = ev

    io.write_json(out / "report.json", body)
    io.write_json(out / "timings.json", timer.timings)
    return EvalReport(body, timer.timings)
