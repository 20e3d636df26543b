from .container import read_container, write_container
from .diagnostics import FitDiagnostics, diagnostics
from .dic import DicReport, dic, residual_deviance
from .sampler import PosteriorSamples, SamplerConfig, SamplingError, run_mcmc

__all__ = [
    "SamplerConfig",
    "PosteriorSamples",
    "SamplingError",
    "run_mcmc",
    "FitDiagnostics",
    "diagnostics",
    "DicReport",
    "dic",
    "residual_deviance",
    "read_container",
    "write_container",
]
