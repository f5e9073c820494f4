"""Desk-scale MIMO channel estimation with one-shot self-supervised denoising."""

from .autodiff import Tensor
from .denoiser import DenoiserConfig, UNetConfig, denoise, predict_ensemble, train
from .estimators import lmmse_estimate, ls_estimate, mmse_oracle, nmse, nmse_db
from .mimo import (
    ChannelModelConfig,
    MobilityScenario,
    channel_correlation,
    evolve_channel,
    gen_channel,
    gen_pilots,
    noise_variance,
    transmit,
)

__version__ = "0.1.0"
