"""Simulation library for media-modulation based grant-free massive access.

Joint device-activity and data detection with a doubly-structured
message-passing detector, its state-evolution predictor, a coded successive
interference cancellation receiver, and a data-aided channel-update strategy,
plus a Monte-Carlo harness and CLI.
"""

from .errors import ConfigurationError, NumericsError, UsageError
from .sysmodel import (
    ArChannelConfig,
    ChannelMatrix,
    Constellation,
    MediaFrame,
    MediaSymbol,
    SystemConfig,
    bits_to_int,
    build_frame,
    draw_activity,
    draw_rayleigh_channel,
    evolve_channel_ar,
    int_to_bits,
    make_constellation,
    modulate_symbol,
    read_config_file,
    rng_for,
    snr_to_noise_variance,
    system_config_from_mapping,
    transmit,
)

__all__ = [name for name in dir() if not name.startswith("_")]
