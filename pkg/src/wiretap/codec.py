"""Learned encoder f(M) -> X^n and softmax decoders for Bob and Eve."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import nnkit
from .channel import normalize_power, normalize_power_backward


@dataclass
class EncoderModel:
    net: nnkit.DenseNet
    M: int
    n: int
    normalize: bool = True

    def __post_init__(self):
        if self.net.n_out != 2 * self.n:
            raise nnkit.ShapeError(f"encoder output width {self.net.n_out} != 2n = {2 * self.n}")
        if self.net.embedding is None or self.net.embedding.shape[0] != self.M:
            raise nnkit.ShapeError("encoder needs an embedding table with M rows")


@dataclass
class DecoderModel:
    net: nnkit.DenseNet
    role: str = "bob"

    def __post_init__(self):
        if self.net.layers[-1].activation != "softmax":
            raise ValueError("decoder must end in softmax")


def make_encoder(M: int, n: int, rng, *, embed_dim: int = 16, hidden: int = 128) -> EncoderModel:
    net = nnkit.init_dense_net(
        [embed_dim, hidden, 2 * n], ["elu", "linear"], rng, n_embed=M, name="encoder",
        meta={"M": M, "n": n, "embed_dim": embed_dim},
    )
    return EncoderModel(net, M, n)


def make_decoder(M: int, n: int, rng, *, hidden: int = 128, role: str = "bob") -> DecoderModel:
    net = nnkit.init_dense_net(
        [2 * n, hidden, M], ["relu", "softmax"], rng, name=f"decoder-{role}", meta={"M": M, "n": n},
    )
    return DecoderModel(net, role)


def encoder_from_net(net: nnkit.DenseNet) -> EncoderModel:
    return EncoderModel(net, int(net.meta["M"]), int(net.meta["n"]))


def _check_messages(messages, M):
    messages = np.asarray(messages)
    if messages.ndim != 1 or not np.issubdtype(messages.dtype, np.integer):
        raise ValueError("messages must be a 1-D integer array")
    if messages.size and (messages.min() < 0 or messages.max() >= M):
        raise ValueError(f"messages must lie in [0, {M})")
    return messages


@dataclass
class EncodeCache:
    net_cache: nnkit.ForwardCache
    x_hat: np.ndarray
    scale: float


def encode(messages, enc: EncoderModel, return_cache: bool = False):
    """Messages -> unit-power codewords as interleaved real ``[k x 2n]``.

    Power is normalized over the batch; use :func:`constellation` for the
    normalization over the full message set.
    """
    messages = _check_messages(messages, enc.M)
    raw, cache = nnkit.forward(enc.net, messages, return_cache=True)
    if enc.normalize:
        x, scale = normalize_power(raw)
    else:
        x, scale = raw, 1.0
    if return_cache:
        return x, EncodeCache(cache, x, scale)
    return x


def encoder_backward(enc: EncoderModel, cache: EncodeCache, grad_x):
    """Parameter gradients of a loss given dL/d(normalized codewords)."""
    g = normalize_power_backward(cache.x_hat, cache.scale, grad_x) if enc.normalize else grad_x
    return nnkit.backward(enc.net, cache.net_cache, g)


def constellation(enc: EncoderModel) -> np.ndarray:
    """All M codewords, normalized over the message set: complex ``[M x n]``."""
    x = encode(np.arange(enc.M), enc)
    return x[:, 0::2] + 1j * x[:, 1::2]


def constellation_real(enc: EncoderModel) -> np.ndarray:
    return encode(np.arange(enc.M), enc)


def write_constellation(path, enc: EncoderModel) -> None:
    x = constellation_real(enc)
    header = ["message"]
    for i in range(1, enc.n + 1):
        header += [f"re_{i}", f"im_{i}"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for m, row in enumerate(x):
            w.writerow([m] + [repr(float(v)) for v in row])


def decode(obs, dec: DecoderModel, return_cache: bool = False):
    """Softmax probabilities and argmax decisions (ties go to the lowest index)."""
    out = nnkit.forward(dec.net, obs, return_cache=return_cache)
    probs = out[0] if return_cache else out
    decisions = np.argmax(probs, axis=1)
    if return_cache:
        return probs, decisions, out[1]
    return probs, decisions


def decoder_step(dec: DecoderModel, state: nnkit.OptimizerState, obs, labels) -> float:
    """One Nadam step on the cross-entropy of ``dec`` on (obs, labels); returns the pre-step loss."""
    probs, _, cache = decode(obs, dec, return_cache=True)
    loss = nnkit.cross_entropy(probs, labels)
    grads = nnkit.backward(dec.net, cache, nnkit.softmax_ce_logit_grad(probs, labels), wrt_logits=True)
    nnkit.nadam_step(dec.net, grads, state)
    return loss


def symbol_error_rate(truth, decisions) -> float:
    truth = np.asarray(truth)
    decisions = np.asarray(decisions)
    if truth.shape != decisions.shape or truth.size < 1:
        raise ValueError(f"length mismatch: {truth.shape} vs {decisions.shape}")
    return float(np.mean(truth != decisions))


def symbol_errors(truth, decisions) -> int:
    return int(np.count_nonzero(np.asarray(truth) != np.asarray(decisions)))
