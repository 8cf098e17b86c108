import math

import numpy as np
import pytest
from scipy.stats import norm

from wiretap import codec, evaluation
from wiretap.config import RunConfig
from wiretap.trainer import WiretapTrainer
from oracles import binomial_3sigma

TINY = dict(encoder_hidden=8, decoder_hidden=8, mine_hidden=8, embed_dim=4, M=4, k_mine=8, k_decoder=16,
            phase1_epochs=1, phase1_iterations=5, phase2_rounds=2, phase2_estimator_steps=2,
            phase3_epochs=1, phase3_iterations=3, sweep_samples=2000)


def test_qam16_limits_and_reference_value():
    assert evaluation.qam16_ser(80.0) < 1e-12
    assert evaluation.qam16_ser(-80.0) == pytest.approx(0.9375, abs=1e-4)
    # Q(sqrt(2)) from the normal survival function
    p4 = 1.5 * norm.sf(math.sqrt(2.0))
    assert evaluation.qam16_ser(10.0) == pytest.approx(1 - (1 - p4) ** 2, rel=1e-12)
    assert evaluation.qam16_ser(10.0) == pytest.approx(0.2220, abs=1e-4)


def test_qam16_strictly_decreasing():
    s = evaluation.qam16_ser(np.arange(-5.0, 25.0, 0.5))
    assert np.all(np.diff(s) < 0)


def test_qam16_points_unit_power():
    pts = evaluation.qam16_points()
    assert len(pts) == 16
    assert np.mean(np.abs(pts) ** 2) == pytest.approx(1.0)


@pytest.mark.parametrize("snr", [0.0, 6.0, 12.0])
def test_qam16_monte_carlo_matches(snr):
    n = 100_000
    err = evaluation.qam16_monte_carlo(snr, n, np.random.default_rng(int(snr)))
    p = evaluation.qam16_ser(snr)
    assert abs(err / n - p) < binomial_3sigma(p, n)


def test_wilson_halfwidth():
    assert evaluation.wilson_halfwidth(0, 100) > 0
    hw = evaluation.wilson_halfwidth(500, 1000)
    assert hw == pytest.approx(3 * math.sqrt(0.25 / 1000), rel=0.02)


def test_snr_at_ser_interpolates():
    assert evaluation.snr_at_ser([0, 10], [1e-1, 1e-3]) == pytest.approx(5.0)
    assert evaluation.snr_at_ser([0, 10], [0.5, 0.4]) is None


@pytest.fixture(scope="module")
def tiny_run():
    return WiretapTrainer(RunConfig(seed=3, **TINY)).run()


def test_sweep_grid_and_pairing(tiny_run):
    tr = tiny_run
    grid = tr.config.snr_grid()
    assert grid == [0.0, 3.0, 6.0, 9.0, 12.0, 15.0, 18.0, 21.0]
    own = evaluation.sweep_ser(tr.encoder, tr.bob, tr.eve, grid, "own", n_symbols=3000)
    bob = evaluation.sweep_ser(tr.encoder, tr.bob, tr.eve, grid, "bob", n_symbols=3000)
    assert len(own.points) == 8
    # Bob's numbers are identical in both scenarios: same noise stream
    np.testing.assert_array_equal(own.ser_bob(), bob.ser_bob())
    for p in own.points:
        assert 0 <= p.ser_bob <= 1 and 0 <= p.ser_eve <= 1
        assert p.n_symbols == 3000


def test_bobs_decoder_scenario_equals_direct_decoding(tiny_run):
    tr = tiny_run
    point = evaluation.evaluate_point(tr.encoder, tr.bob, tr.bob, 9.0, 7.0, 1000, seed=5)
    res = evaluation.sweep_ser(tr.encoder, tr.bob, tr.eve, [9.0], "bob", n_symbols=1000, seed=5)
    assert res.points[0].errors_eve == point.errors_eve


def test_random_decoder_is_at_chance():
    enc = codec.make_encoder(16, 1, np.random.default_rng(0))
    dec = codec.make_decoder(16, 1, np.random.default_rng(1))
    dec.net.layers[-1].W[:] = 0.0  # a decoder that knows nothing: argmax of constant logits
    dec.net.layers[-1].b[:] = np.random.default_rng(2).standard_normal(16) * 1e-3
    res = evaluation.sweep_ser(enc, dec, dec, [6.0], "own", n_symbols=50_000)
    assert abs(res.points[0].ser_eve - 15 / 16) < binomial_3sigma(15 / 16, 50_000)


def test_noiseless_limit_for_trained_decoder():
    enc = codec.make_encoder(16, 1, np.random.default_rng(5))
    dec = codec.make_decoder(16, 1, np.random.default_rng(6))
    state = evaluation.nnkit.OptimizerState.for_net(dec.net)
    rng = np.random.default_rng(7)
    table = codec.constellation_real(enc)
    for _ in range(1500):
        m = rng.integers(0, 16, 500)
        codec.decoder_step(dec, state, table[m], m)
    res = evaluation.sweep_ser(enc, dec, dec, [200.0], "own", n_symbols=20_000)
    assert res.points[0].ser_bob < 1e-3


def test_missing_models_rejected(tmp_path):
    with pytest.raises(evaluation.MissingArtifactError):
        evaluation.sweep_ser(None, None, None, [0.0])
    with pytest.raises(evaluation.MissingArtifactError):
        evaluation.load_run(tmp_path)


def test_export_files_and_determinism(tmp_path, tiny_run):
    evaluation.export_artifacts(tiny_run, tmp_path / "a")
    evaluation.export_artifacts(tiny_run, tmp_path / "a")  # overwrite in place
    evaluation.export_artifacts(tiny_run, tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted([
        "bob.wts", "constellation.csv", "encoder.wts", "eve.wts", "manifest.txt", "mi0.wts", "mi1.wts",
        "mine_telemetry.csv", "qam16.csv", "schema.txt", "sweep_bob.csv", "sweep_own.csv", "telemetry.csv",
    ])
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes(), n
    sweep = (tmp_path / "a" / "sweep_own.csv").read_text().splitlines()
    assert sweep[0] == ",".join(evaluation.SWEEP_COLUMNS)
    assert len(sweep) == 1 + 8
    assert len((tmp_path / "a" / "constellation.csv").read_text().splitlines()) == 1 + tiny_run.config.M


def test_load_run_roundtrip(tmp_path, tiny_run):
    evaluation.export_artifacts(tiny_run, tmp_path, sweeps=False)
    run = evaluation.load_run(tmp_path)
    assert run.config == tiny_run.config
    np.testing.assert_array_equal(codec.constellation(run.encoder), codec.constellation(tiny_run.encoder))


def test_export_requires_completed_run(tmp_path):
    tr = WiretapTrainer(RunConfig(**TINY))
    with pytest.raises(RuntimeError):
        evaluation.export_artifacts(tr, tmp_path)


def test_alpha_study_and_compare_write_summaries(tmp_path):
    cfg = RunConfig(seed=1, **TINY)
    rows = evaluation.alpha_study(cfg, [0.4, 0.7], tmp_path / "alpha")
    assert {r["alpha"] for r in rows} == {0.4, 0.7}
    assert (tmp_path / "alpha" / "alpha_summary.csv").exists()
    assert (tmp_path / "alpha" / "alpha_0.4" / "sweep_own.csv").exists()
    summary = evaluation.compare_methods(cfg, tmp_path / "cmp")
    assert set(summary) == {"mimi", "mice", "aece"}
    assert (tmp_path / "cmp" / "compare_summary.csv").exists()


def test_worker_count_does_not_change_results(tiny_run):
    tr = tiny_run
    a = evaluation.sweep_ser(tr.encoder, tr.bob, tr.eve, [0.0, 9.0, 21.0], n_symbols=2000, workers=1)
    b = evaluation.sweep_ser(tr.encoder, tr.bob, tr.eve, [0.0, 9.0, 21.0], n_symbols=2000, workers=3)
    assert a == b
