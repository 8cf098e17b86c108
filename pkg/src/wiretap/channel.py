"""Degraded complex AWGN wiretap channel.

Complex codewords travel as real arrays with interleaved components
``(re_1, im_1, ..., re_n, im_n)``. ``CN(0, s2)`` means variance ``s2 / 2`` per
real component.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

# Named noise/initialization streams derived from one master seed.
STREAM_NAMES = ("encoder-init", "mine0", "mine1", "channel-B", "channel-E", "decoder-init", "eval")


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``name`` under master ``seed``.

    The same (seed, name) always yields the same stream, regardless of what
    other streams have been drawn.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(zlib.crc32(name.encode()),))
    return np.random.Generator(np.random.PCG64(ss))


def snr_db_to_sigma2(snr_db: float, power: float = 1.0) -> float:
    if power <= 0:
        raise ValueError("power must be positive")
    return power * 10.0 ** (-snr_db / 10.0)


def sigma2_to_snr_db(sigma2: float, power: float = 1.0) -> float:
    if sigma2 <= 0:
        return float("inf")
    return 10.0 * np.log10(power / sigma2)


@dataclass(frozen=True)
class ChannelParams:
    sigma2_B: float
    sigma2_E: float
    power: float = 1.0

    def __post_init__(self):
        if self.sigma2_B < 0 or self.sigma2_E < 0:
            raise ValueError("noise variances must be non-negative")
        if self.power <= 0:
            raise ValueError("reference power must be positive")

    @classmethod
    def from_snr_db(cls, snr_main_db: float, snr_eve_db: float, power: float = 1.0) -> ChannelParams:
        """Each SNR parameterizes its own additive term; Eve's is added on top of Bob's."""
        return cls(snr_db_to_sigma2(snr_main_db, power), snr_db_to_sigma2(snr_eve_db, power), power)

    @property
    def snr_main_db(self) -> float:
        return sigma2_to_snr_db(self.sigma2_B, self.power)

    @property
    def effective_snr_eve_db(self) -> float:
        return sigma2_to_snr_db(self.sigma2_B + self.sigma2_E, self.power)


def to_real(x) -> np.ndarray:
    """Complex [k x n] -> interleaved real [k x 2n]."""
    x = np.asarray(x, dtype=complex)
    out = np.empty((x.shape[0], 2 * x.shape[1]))
    out[:, 0::2] = x.real
    out[:, 1::2] = x.imag
    return out


def to_complex(x) -> np.ndarray:
    """Interleaved real [k x 2n] -> complex [k x n]."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] % 2:
        raise ValueError(f"expected [k x 2n] real array, got {x.shape}")
    return x[:, 0::2] + 1j * x[:, 1::2]


def mean_power(x_real) -> float:
    """Mean |x_i|^2 over batch and complex symbols of an interleaved real batch."""
    x_real = np.asarray(x_real, dtype=float)
    return float(2.0 * np.mean(x_real**2))


def normalize_power(x_real, power: float = 1.0):
    """Scale the whole batch by one scalar so its mean symbol power is ``power``.

    Returns ``(normalized, scale)`` where ``normalized = x / scale``.
    """
    x_real = np.asarray(x_real, dtype=float)
    p = mean_power(x_real)
    if not p > 0:
        raise ValueError("cannot normalize an all-zero batch")
    scale = np.sqrt(p / power)
    return x_real / scale, scale


def normalize_power_backward(x_hat, scale, grad, power: float = 1.0):
    """Vector-Jacobian product of :func:`normalize_power` at its output ``x_hat``."""
    # the scale direction is projected out: sum(x_hat**2) == x_hat.size * power / 2
    return (grad - x_hat * (2.0 * np.sum(grad * x_hat) / (x_hat.size * power))) / scale


def complex_noise(shape, sigma2: float, rng: np.random.Generator) -> np.ndarray:
    """Real-interleaved CN(0, sigma2) samples for ``shape = (k, 2n)``."""
    if sigma2 < 0:
        raise ValueError("noise variance must be non-negative")
    noise = rng.standard_normal(shape)
    return noise * np.sqrt(sigma2 / 2.0)


def main_channel(x_real, params: ChannelParams, rng: np.random.Generator):
    x_real = np.asarray(x_real, dtype=float)
    if params.sigma2_B == 0:
        return x_real.copy()
    return x_real + complex_noise(x_real.shape, params.sigma2_B, rng)


def eve_channel(y_real, params: ChannelParams, rng: np.random.Generator):
    y_real = np.asarray(y_real, dtype=float)
    if params.sigma2_E == 0:
        return y_real.copy()
    return y_real + complex_noise(y_real.shape, params.sigma2_E, rng)
