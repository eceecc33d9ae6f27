from .diagnostics import effective_sample_size, mcse_mean, rank_normalize, split_rhat, summarize
from .hmc import InitMode, PosteriorSamples, SamplerConfig, leapfrog, sample

__all__ = [
    "InitMode",
    "PosteriorSamples",
    "SamplerConfig",
    "effective_sample_size",
    "leapfrog",
    "mcse_mean",
    "rank_normalize",
    "sample",
    "split_rhat",
    "summarize",
]
