"""Spectral analysis of length collapse in softmax self-attention.

Submodules:

- :mod:`lencollapse.spectral`: DFT, DC/HC projections, power iteration
- :mod:`lencollapse.attention`: Gaussian attention, filter-rate bounds, TempScale
- :mod:`lencollapse.encoder`: toy transformer encoder and collapse sweeps
- :mod:`lencollapse.metrics`: bucketed cosine, centroid distance, rank histograms
- :mod:`lencollapse.cli`: the ``lencollapse`` command
"""

__version__ = "0.1.0"

from .attention import (  # noqa: E402
    AttentionConfig,
    sample_attention,
    sigma_a,
    softmax_attention,
    theorem2_check,
    theorem3_bound,
)
from .encoder import EncoderConfig, ToyEncoder, encoder_forward, init_encoder  # noqa: E402
from .spectral import (  # noqa: E402
    SpectralSplitter,
    dc_project,
    dft,
    hc_dc_ratio,
    hc_project,
    spectral_norm,
)

__all__ = [
    "AttentionConfig",
    "EncoderConfig",
    "SpectralSplitter",
    "ToyEncoder",
    "dc_project",
    "dft",
    "encoder_forward",
    "hc_dc_ratio",
    "hc_project",
    "init_encoder",
    "sample_attention",
    "sigma_a",
    "softmax_attention",
    "spectral_norm",
    "theorem2_check",
    "theorem3_bound",
]
