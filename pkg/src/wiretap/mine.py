"""Donsker-Varadhan mutual information estimators.

A statistics network ``T(x, y)`` is trained to maximize the batch bound

    mean_i T(x_i, y_i) - log mean_i exp T(x_i, y_perm(i))

where ``perm`` is a derangement of the batch. Everything is in nats.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import nnkit


@dataclass
class PairBatch:
    joint: np.ndarray  # [k x (dx + dy)]
    marginal: np.ndarray  # [k x (dx + dy)]
    perm: np.ndarray  # marginal row i pairs x_i with y_perm[i]

    @property
    def k(self) -> int:
        return self.joint.shape[0]


def derangement(k: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random permutation of ``range(k)`` without fixed points."""
    if k < 2:
        raise ValueError("a derangement needs at least two elements")
    idx = np.arange(k)
    while True:
        perm = rng.permutation(k)
        if not np.any(perm == idx):
            return perm


def shuffle_marginal(x, y, rng: np.random.Generator | None, perm=None) -> PairBatch:
    """Build joint pairs ``(x_i, y_i)`` and product-of-marginals pairs ``(x_i, y_perm(i))``.

    ``perm`` overrides the random derangement (used to replay a batch).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if y.ndim == 1:
        y = y[:, None]
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"x has {x.shape[0]} rows, y has {y.shape[0]}")
    if perm is None:
        perm = derangement(x.shape[0], rng)
    return PairBatch(np.hstack([x, y]), np.hstack([x, y[perm]]), perm)


class Smoother:
    """Exponential moving average with an effective window of ``window`` batches."""

    def __init__(self, window: int = 50):
        self.rate = 2.0 / (window + 1.0)
        self.value = None

    def update(self, raw: float) -> float:
        self.value = raw if self.value is None else self.value + self.rate * (raw - self.value)
        return self.value


@dataclass
class DvEstimator:
    stats_net: nnkit.DenseNet
    state: nnkit.OptimizerState
    link: str = "main"
    x_dim: int = 2
    ema_denominator: bool = False
    ema_rate: float = 0.01
    smoothing_window: int = 50
    log_ma: float | None = None  # running log mean exp(T) for the bias-corrected gradient
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.stats_net.n_out != 1 or self.stats_net.layers[-1].activation != "linear":
            raise ValueError("statistics network must end in a linear scalar output")
        self.smoother = Smoother(self.smoothing_window)

    @property
    def smoothed(self) -> float | None:
        return self.smoother.value

    def record(self, raw: float) -> float:
        smoothed = self.smoother.update(raw)
        self.history.append((len(self.history) + 1, self.link, raw, smoothed))
        return smoothed


def make_estimator(x_dim: int, y_dim: int, rng, *, hidden: int = 100, lr: float = 1e-3,
                   link: str = "main", **kw) -> DvEstimator:
    """One relu hidden layer and a linear scalar output."""
    net = nnkit.init_dense_net(
        [x_dim + y_dim, hidden, 1], ["relu", "linear"], rng, name=f"mine-{link}",
        meta={"x_dim": x_dim, "y_dim": y_dim},
    )
    return DvEstimator(net, nnkit.OptimizerState.for_net(net, lr=lr), link=link, x_dim=x_dim, **kw)


def dv_from_scores(t_joint, t_marg) -> float:
    t_joint = np.ravel(t_joint)
    t_marg = np.ravel(t_marg)
    if not (np.isfinite(t_joint).all() and np.isfinite(t_marg).all()):
        raise nnkit.NonFiniteError("statistics network produced non-finite output")
    return float(np.mean(t_joint) - (logsumexp(t_marg) - np.log(t_marg.size)))


def dv_estimate(est: DvEstimator, pairs: PairBatch) -> float:
    if pairs.k < 2:
        raise ValueError("need at least two pairs")
    return dv_from_scores(nnkit.forward(est.stats_net, pairs.joint), nnkit.forward(est.stats_net, pairs.marginal))


def dv_estimate_all_pairs(est: DvEstimator, x, y) -> float:
    """Bound evaluated with every off-diagonal pair (x_i, y_j), i != j, as a marginal sample.

    A low-variance evaluation for large held-out batches; training uses
    :func:`dv_estimate` on derangement pairs.
    """
    x = np.asarray(x, dtype=float).reshape(len(x), -1)
    y = np.asarray(y, dtype=float).reshape(len(y), -1)
    k = x.shape[0]
    if k < 2:
        raise ValueError("need at least two pairs")
    t_joint = nnkit.forward(est.stats_net, np.hstack([x, y]))
    ii, jj = np.nonzero(~np.eye(k, dtype=bool))
    t_marg = nnkit.forward(est.stats_net, np.hstack([x[ii], y[jj]]))
    return dv_from_scores(t_joint, t_marg)


@dataclass
class DvGradients:
    value: float
    params: list  # d value / d theta (ascent direction)
    joint_input: np.ndarray  # d value / d joint rows
    marginal_input: np.ndarray  # d value / d marginal rows


def dv_gradients(est: DvEstimator, pairs: PairBatch, *, use_ema: bool = False) -> DvGradients:
    """Value of the batch bound and its gradients w.r.t. parameters and inputs.

    With ``use_ema`` the marginal weights use the running denominator instead
    of the batch one (bias-corrected gradient); the value is unaffected.
    """
    net = est.stats_net
    t_j, c_j = nnkit.forward(net, pairs.joint, return_cache=True)
    t_m, c_m = nnkit.forward(net, pairs.marginal, return_cache=True)
    value = dv_from_scores(t_j, t_m)
    k = pairs.k
    if use_ema and est.log_ma is not None:
        log_batch = logsumexp(t_m) - np.log(k)
        # log((1 - r) * ma + r * batch)
        est.log_ma = float(np.logaddexp(np.log1p(-est.ema_rate) + est.log_ma, np.log(est.ema_rate) + log_batch))
        w = np.exp(t_m - est.log_ma) / k
    else:
        if use_ema:
            est.log_ma = float(logsumexp(t_m) - np.log(k))
        w = np.exp(t_m - logsumexp(t_m))
    g_j = np.full_like(t_j, 1.0 / k)
    g_m = -w
    gp_j, gx_j = nnkit.backward(net, c_j, g_j, need_input_grad=True)
    gp_m, gx_m = nnkit.backward(net, c_m, g_m, need_input_grad=True)
    return DvGradients(value, [a + b for a, b in zip(gp_j, gp_m)], gx_j, gx_m)


def estimator_step(est: DvEstimator, pairs: PairBatch) -> float:
    """One Nadam ascent step on the bound; returns the post-step estimate on ``pairs``."""
    grads = dv_gradients(est, pairs, use_ema=est.ema_denominator)
    nnkit.nadam_step(est.stats_net, [-g for g in grads.params], est.state)
    raw = dv_estimate(est, pairs)
    est.record(raw)
    return raw


def write_telemetry(path, estimators) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "link", "raw_mi_nats", "smoothed_mi_nats"])
        for est in estimators:
            for step, link, raw, smooth in est.history:
                w.writerow([step, link, repr(float(raw)), repr(float(smooth))])


def gaussian_mi(rho: float) -> float:
    """Analytic MI (nats) of a bivariate standard Gaussian with correlation ``rho``."""
    return -0.5 * np.log1p(-rho * rho)


def gaussian_benchmark(rho: float, *, steps: int = 5000, k: int = 64, hidden: int = 100, lr: float = 1e-3,
                       seed: int = 0, ema_denominator: bool = False) -> DvEstimator:
    """Train an estimator on fresh jointly Gaussian batches; returns it with its history."""
    rng_init = np.random.default_rng([seed, 1])
    rng = np.random.default_rng([seed, 2])
    est = make_estimator(1, 1, rng_init, hidden=hidden, lr=lr, link=f"gauss-rho{rho:g}",
                         ema_denominator=ema_denominator)
    s = np.sqrt(1.0 - rho * rho)
    for _ in range(steps):
        a = rng.standard_normal(k)
        b = rho * a + s * rng.standard_normal(k)
        estimator_step(est, shuffle_marginal(a, b, rng))
    return est
