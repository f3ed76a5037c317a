"""Night-time image dehazing toolkit."""

from ._nighthaze import (
    Error,
    Model,
    bright_channel,
    cli,
    dark_channel,
    dehaze_bccr,
    dehaze_dcp,
    load_image,
    psnr,
    save_image,
    ssim,
    synth_pair,
)

__all__ = [
    "Error",
    "Model",
    "bright_channel",
    "cli",
    "dark_channel",
    "dehaze_bccr",
    "dehaze_dcp",
    "load_image",
    "psnr",
    "save_image",
    "ssim",
    "synth_pair",
]
