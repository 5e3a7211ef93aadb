"""Out-of-domain discovery in the latent spaces of a small pixel diffusion model."""

from .geometry import GeometryReport, LatentBank, geometry_report
from .sampler import RejectionConfig, generate_ood, sample_ood_latent
from .schedule import NoiseSchedule, build_schedule, toy_schedule
from .trajectory import StepPlan, denoise, invert, uniform_plan

__all__ = [
    "GeometryReport",
    "LatentBank",
    "NoiseSchedule",
    "RejectionConfig",
    "StepPlan",
    "build_schedule",
    "denoise",
    "generate_ood",
    "geometry_report",
    "invert",
    "sample_ood_latent",
    "toy_schedule",
    "uniform_plan",
]

__version__ = "0.1.0"
