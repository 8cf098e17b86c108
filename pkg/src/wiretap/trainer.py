"""Secrecy objectives and the three-phase training schedule.

Phase 1 pretrains the two statistics networks against a frozen random
encoder. Phase 2 alternates estimator ascent steps (encoder frozen) with
encoder steps on the selected objective (estimators frozen). Phase 3 trains
Bob's and Eve's decoders against the frozen encoder.

Objectives:

* ``mimi``: alpha * I(X;Y) - (1 - alpha) * I(X;Z), both terms from the
  estimators. Never touches a decoder.
* ``mice``: alpha * I(X;Y) - (1 - alpha) * CE(Eve, uniform), with a
  concurrently trained Eve decoder.
* ``aece``: alpha * CE(Bob, M) + (1 - alpha) * CE(Eve, uniform), minimized
  end to end through the simulated channel.
"""
from __future__ import annotations

import csv
import logging

import numpy as np

from . import codec, mine, nnkit
from .channel import ChannelParams, complex_noise, rng_stream
from .config import RunConfig

log = logging.getLogger(__name__)


class PhaseOrderError(RuntimeError):
    pass


def objective_mi_mi(alpha: float, i_legal: float, i_eve: float) -> float:
    _check_alpha(alpha)
    return alpha * i_legal - (1.0 - alpha) * i_eve


def soft_cross_entropy(probs, target) -> float:
    """Cross-entropy against integer labels or a row-stochastic target matrix."""
    probs = np.asarray(probs, dtype=float)
    target = np.asarray(target)
    if target.ndim == 1:
        return nnkit.cross_entropy(probs, target)
    if target.shape != probs.shape:
        raise nnkit.ShapeError(f"target {target.shape} != probs {probs.shape}")
    return float(-np.mean(np.sum(target * np.log(np.maximum(probs, nnkit.LOG_CLAMP)), axis=1)))


def uniform_target(k: int, M: int) -> np.ndarray:
    return np.full((k, M), 1.0 / M)


def objective_mi_ce(alpha: float, i_legal: float, eve_probs, target) -> float:
    """Maximized. ``target`` is Eve's target: labels, or a distribution per row."""
    _check_alpha(alpha)
    if eve_probs is None:
        raise ValueError("MI+CE needs Eve's decoder output")
    return alpha * i_legal - (1.0 - alpha) * soft_cross_entropy(eve_probs, target)


def objective_ae_ce(alpha: float, bob_probs, eve_probs, labels, eve_target=None) -> float:
    """Minimized. Eve's term defaults to the uniform target over all messages."""
    _check_alpha(alpha)
    if bob_probs is None or eve_probs is None:
        raise ValueError("AE+CE needs both decoder outputs")
    eve_probs = np.asarray(eve_probs)
    if eve_target is None:
        eve_target = uniform_target(*eve_probs.shape)
    return alpha * nnkit.cross_entropy(bob_probs, labels) + (1.0 - alpha) * soft_cross_entropy(eve_probs, eve_target)


def _check_alpha(alpha):
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")


def _pair_input_grad(gx_joint, gx_marg, perm, d):
    """Fold d(value)/d(stats-net inputs) back onto the shared codeword rows.

    Joint row i holds (x_i, x_i + noise_i); marginal row i holds
    (x_i, x_perm(i) + noise_perm(i)).
    """
    g = gx_joint[:, :d] + gx_joint[:, d:] + gx_marg[:, :d]
    np.add.at(g, perm, gx_marg[:, d:])
    return g


TELEMETRY_COLUMNS = ["phase", "round", "step", "mi_legal", "mi_eve", "objective", "loss_bob", "loss_eve"]


class WiretapTrainer:
    """Holds models, RNG streams and telemetry for one run."""

    def __init__(self, config: RunConfig):
        self.config = config
        cfg = config
        seed = cfg.seed
        self.rng = {name: rng_stream(seed, name) for name in (
            "encoder-init", "mine0", "mine1", "channel-B", "channel-E", "decoder-init", "messages",
        )}
        self.params = ChannelParams.from_snr_db(cfg.train_snr_db_main, cfg.train_snr_db_eve)
        self.d = 2 * cfg.n
        self.encoder = codec.make_encoder(cfg.M, cfg.n, self.rng["encoder-init"], embed_dim=cfg.embed_dim,
                                          hidden=cfg.encoder_hidden)
        self.encoder_state = nnkit.OptimizerState.for_net(self.encoder.net, lr=cfg.lr)
        kw = dict(hidden=cfg.mine_hidden, lr=cfg.lr, ema_denominator=cfg.mine_ema_denominator,
                  smoothing_window=cfg.smoothing_window)
        self.mi0 = mine.make_estimator(self.d, self.d, self.rng["mine0"], link="main", **kw)
        self.mi1 = mine.make_estimator(self.d, self.d, self.rng["mine1"], link="eve", **kw)
        self.bob: codec.DecoderModel | None = None
        self.eve: codec.DecoderModel | None = None
        self.telemetry: list[tuple] = []
        self.phase_done = {1: False, 2: False, 3: False}
        self.objective_smoother = mine.Smoother(cfg.smoothing_window)
        log.info("train SNR main %.2f dB, eve term %.2f dB, effective eve %.2f dB",
                 self.params.snr_main_db, cfg.train_snr_db_eve, self.params.effective_snr_eve_db)

    # -- sampling ------------------------------------------------------------

    def _messages(self, k):
        return self.rng["messages"].integers(0, self.config.M, size=k)

    def _noise(self, shape):
        nb = complex_noise(shape, self.params.sigma2_B, self.rng["channel-B"])
        ne = complex_noise(shape, self.params.sigma2_E, self.rng["channel-E"])
        return nb, ne

    def _estimator_round(self):
        k = self.config.k_mine
        x = codec.encode(self._messages(k), self.encoder)
        nb, ne = self._noise(x.shape)
        y = x + nb
        z = y + ne
        r0 = mine.estimator_step(self.mi0, mine.shuffle_marginal(x, y, self.rng["mine0"]))
        r1 = mine.estimator_step(self.mi1, mine.shuffle_marginal(x, z, self.rng["mine1"]))
        return r0, r1

    # -- phases ------------------------------------------------------------

    def phase1_pretrain(self):
        cfg = self.config
        steps = cfg.phase1_epochs * cfg.phase1_iterations
        for step in range(1, steps + 1):
            self._estimator_round()
            if step % 50 == 0 or step == steps:
                self._log(1, (step - 1) // max(cfg.phase1_iterations, 1) + 1, step)
        self.phase_done[1] = True
        if steps:
            log.info("phase 1: I(X;Y) ~ %.4f, I(X;Z) ~ %.4f nats", self.mi0.smoothed, self.mi1.smoothed)
        return self.mi0, self.mi1

    def phase2_alternate(self):
        if not self.phase_done[1]:
            raise PhaseOrderError("phase 2 needs the phase-1 estimators")
        cfg = self.config
        if cfg.objective in ("mice", "aece"):
            self._init_phase2_decoders()
        step = 0
        for rnd in range(1, cfg.phase2_rounds + 1):
            for _ in range(cfg.phase2_estimator_steps):
                self._estimator_round()
            losses = (None, None)
            if cfg.objective != "mimi":
                losses = self._phase2_decoder_steps()
            for _ in range(cfg.phase2_encoder_steps):
                step += 1
                value = self.encoder_step()
            if cfg.phase2_encoder_steps:
                self.objective_smoother.update(value)
            if rnd % 10 == 0 or rnd == cfg.phase2_rounds:
                self._log(2, rnd, step, *losses)
        self.phase_done[2] = True
        return self.encoder

    def encoder_step(self) -> float:
        """One encoder update on the configured objective; estimators and decoders stay frozen."""
        k = self.config.k_mine
        msgs = self._messages(k)
        nb, ne = self._noise((k, self.d))
        perm0 = mine.derangement(k, self.rng["mine0"])
        perm1 = mine.derangement(k, self.rng["mine1"])
        value, grads = self.encoder_objective(msgs, nb, ne, perm0, perm1)
        nnkit.nadam_step(self.encoder.net, grads, self.encoder_state)
        return value

    def encoder_objective(self, msgs, nb, ne, perm0, perm1):
        """Objective value and encoder gradients of the loss for one fixed batch.

        The channel noise and marginal permutations are given, so this is a
        deterministic function of the encoder parameters. The loss is the
        negated objective for ``mimi``/``mice`` and the objective itself for
        ``aece``.
        """
        cfg = self.config
        a = cfg.alpha
        k = len(msgs)
        x, cache = codec.encode(msgs, self.encoder, return_cache=True)
        y = x + nb
        z = y + ne
        grad_x = np.zeros_like(x)
        if cfg.objective in ("mimi", "mice"):
            pb = mine.shuffle_marginal(x, y, None, perm=perm0)
            gb = mine.dv_gradients(self.mi0, pb)
            grad_x -= a * _pair_input_grad(gb.joint_input, gb.marginal_input, pb.perm, self.d)
            i_legal = gb.value
        if cfg.objective == "mimi":
            pe = mine.shuffle_marginal(x, z, None, perm=perm1)
            ge = mine.dv_gradients(self.mi1, pe)
            grad_x += (1.0 - a) * _pair_input_grad(ge.joint_input, ge.marginal_input, pe.perm, self.d)
            value = objective_mi_mi(a, i_legal, ge.value)
        elif cfg.objective == "mice":
            probs_e, _, ce = codec.decode(z, self.eve, return_cache=True)
            target = uniform_target(k, cfg.M)
            value = objective_mi_ce(a, i_legal, probs_e, target)
            _, gz = nnkit.backward(self.eve.net, ce, (1.0 - a) * (probs_e - target) / k,
                                   need_input_grad=True, wrt_logits=True)
            grad_x += gz
        else:
            probs_b, _, cb = codec.decode(y, self.bob, return_cache=True)
            probs_e, _, ce = codec.decode(z, self.eve, return_cache=True)
            target = uniform_target(k, cfg.M)
            value = objective_ae_ce(a, probs_b, probs_e, msgs, target)
            _, gy = nnkit.backward(self.bob.net, cb, a * nnkit.softmax_ce_logit_grad(probs_b, msgs),
                                   need_input_grad=True, wrt_logits=True)
            _, gz = nnkit.backward(self.eve.net, ce, (1.0 - a) * (probs_e - target) / k,
                                   need_input_grad=True, wrt_logits=True)
            grad_x += gy + gz
        if not np.isfinite(value):
            raise nnkit.NonFiniteError(f"non-finite {cfg.objective} objective")
        return value, codec.encoder_backward(self.encoder, cache, grad_x)

    def _init_phase2_decoders(self):
        cfg = self.config
        rng = rng_stream(cfg.seed, "decoder-init/phase2")
        self._p2_eve = codec.make_decoder(cfg.M, cfg.n, rng, hidden=cfg.decoder_hidden, role="eve")
        self._p2_eve_state = nnkit.OptimizerState.for_net(self._p2_eve.net, lr=cfg.lr)
        self.eve = self._p2_eve
        if cfg.objective == "aece":
            self._p2_bob = codec.make_decoder(cfg.M, cfg.n, rng, hidden=cfg.decoder_hidden, role="bob")
            self._p2_bob_state = nnkit.OptimizerState.for_net(self._p2_bob.net, lr=cfg.lr)
            self.bob = self._p2_bob

    def _phase2_decoder_steps(self):
        cfg = self.config
        msgs = self._messages(cfg.k_decoder)
        x = codec.encode(msgs, self.encoder)
        nb, ne = self._noise(x.shape)
        loss_b = None
        if cfg.objective == "aece":
            loss_b = codec.decoder_step(self.bob, self._p2_bob_state, x + nb, msgs)
        loss_e = codec.decoder_step(self.eve, self._p2_eve_state, x + nb + ne, msgs)
        return loss_b, loss_e

    def phase3_train_decoders(self):
        if not self.phase_done[2]:
            raise PhaseOrderError("phase 3 needs the phase-2 encoder")
        cfg = self.config
        rng = self.rng["decoder-init"]
        self.bob = codec.make_decoder(cfg.M, cfg.n, rng, hidden=cfg.decoder_hidden, role="bob")
        self.eve = codec.make_decoder(cfg.M, cfg.n, rng, hidden=cfg.decoder_hidden, role="eve")
        sb = nnkit.OptimizerState.for_net(self.bob.net, lr=cfg.lr)
        se = nnkit.OptimizerState.for_net(self.eve.net, lr=cfg.lr)
        steps = cfg.phase3_epochs * cfg.phase3_iterations
        self.decoder_losses = []
        for step in range(1, steps + 1):
            msgs = self._messages(cfg.k_decoder)
            x = codec.encode(msgs, self.encoder)
            nb, ne = self._noise(x.shape)
            y = x + nb
            lb = codec.decoder_step(self.bob, sb, y, msgs)
            le = codec.decoder_step(self.eve, se, y + ne, msgs)
            self.decoder_losses.append((lb, le))
            if step % 50 == 0 or step == steps:
                self._log(3, (step - 1) // max(cfg.phase3_iterations, 1) + 1, step, lb, le)
        self.phase_done[3] = True
        if steps:
            tail = np.mean(self.decoder_losses[-50:], axis=0)
            log.info("phase 3: Bob CE %.4f, Eve CE %.4f nats (chance %.4f)", tail[0], tail[1], np.log(cfg.M))
        return self.bob, self.eve

    def run(self):
        self.phase1_pretrain()
        self.phase2_alternate()
        self.phase3_train_decoders()
        return self

    # -- telemetry ---------------------------------------------------------

    def _log(self, phase, rnd, step, loss_bob=None, loss_eve=None):
        self.telemetry.append((
            phase, rnd, step, self.mi0.smoothed, self.mi1.smoothed,
            self.objective_smoother.value if phase == 2 else None, loss_bob, loss_eve,
        ))

    def write_telemetry(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TELEMETRY_COLUMNS)
            for row in self.telemetry:
                w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, float) else v) for v in row])
