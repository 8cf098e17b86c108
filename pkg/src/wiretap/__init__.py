"""Learned secure coding for the degraded Gaussian wiretap channel.

An encoder is trained against two Donsker-Varadhan mutual information
estimators (legitimate and eavesdropper links); Bob's and Eve's decoders are
trained afterwards and evaluated by Monte Carlo SER sweeps.
"""
from .channel import ChannelParams, normalize_power, snr_db_to_sigma2
from .config import RunConfig, load_config, parse_config
from .trainer import WiretapTrainer

__all__ = [
    "ChannelParams",
    "RunConfig",
    "WiretapTrainer",
    "load_config",
    "normalize_power",
    "parse_config",
    "snr_db_to_sigma2",
]
