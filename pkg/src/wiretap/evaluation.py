"""Monte Carlo SER sweeps, the 16-QAM reference curve, and run artifacts."""
from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import erfc

from . import codec, mine, nnkit
from .channel import ChannelParams, complex_noise, rng_stream, snr_db_to_sigma2
from .config import RunConfig, load_config
from .trainer import WiretapTrainer

log = logging.getLogger(__name__)

SCENARIOS = ("own", "bob")
WILSON_Z = 3.0
_CHUNK = 20_000

SWEEP_COLUMNS = [
    "snr_db_main", "snr_db_eve_effective", "scenario", "n_symbols",
    "errors_bob", "ser_bob", "halfwidth_bob", "errors_eve", "ser_eve", "halfwidth_eve",
]
QAM_COLUMNS = ["snr_db", "ser_qam16"]
CONSTELLATION_NOTE = "message,re_1,im_1,...,re_n,im_n"

SCHEMA = f"""\
sweep_<scenario>.csv: {",".join(SWEEP_COLUMNS)}
  scenario own = Eve uses her own trained decoder, bob = Eve applies Bob's decoder to Z
  halfwidth_* = Wilson score interval half-width at z = {WILSON_Z:g}
qam16.csv: {",".join(QAM_COLUMNS)}
constellation.csv: {CONSTELLATION_NOTE}
telemetry.csv: phase,round,step,mi_legal,mi_eve,objective,loss_bob,loss_eve
mine_telemetry.csv: step,link,raw_mi_nats,smoothed_mi_nats
*.wts: nnkit weight files (header + little-endian float64 parameters)
All information quantities are in nats.
"""


class MissingArtifactError(FileNotFoundError):
    pass


def qfunc(x):
    return 0.5 * erfc(np.asarray(x, dtype=float) / np.sqrt(2.0))


def qam16_ser(snr_db):
    """Exact 16-QAM symbol error probability on complex AWGN at Es/N0 = ``snr_db``."""
    gamma = 10.0 ** (np.asarray(snr_db, dtype=float) / 10.0)
    p4 = 1.5 * qfunc(np.sqrt(gamma / 5.0))
    out = 1.0 - (1.0 - p4) ** 2
    return float(out) if np.ndim(out) == 0 else out


def qam16_points() -> np.ndarray:
    levels = np.array([-3.0, -1.0, 1.0, 3.0])
    pts = (levels[:, None] + 1j * levels[None, :]).ravel()
    return pts / np.sqrt(np.mean(np.abs(pts) ** 2))


def qam16_monte_carlo(snr_db: float, n_symbols: int, rng: np.random.Generator) -> int:
    """Error count of nearest-point 16-QAM detection over ``n_symbols`` uses."""
    pts = qam16_points()
    step = 2.0 / np.sqrt(10.0)
    scale = np.sqrt(snr_db_to_sigma2(snr_db) / 2.0)
    errors = 0
    for start in range(0, n_symbols, 1_000_000):
        m = min(1_000_000, n_symbols - start)
        tx = rng.integers(0, 16, m)
        r = pts[tx] + scale * (rng.standard_normal(m) + 1j * rng.standard_normal(m))
        # per-axis slicing onto the 4 levels
        idx_re = np.clip(np.round(r.real / step + 1.5), 0, 3).astype(int)
        idx_im = np.clip(np.round(r.imag / step + 1.5), 0, 3).astype(int)
        errors += int(np.count_nonzero(idx_re * 4 + idx_im != tx))
    return errors


def wilson_halfwidth(errors: int, n: int, z: float = WILSON_Z) -> float:
    if n <= 0:
        raise ValueError("need at least one trial")
    p = errors / n
    denom = 1.0 + z * z / n
    return float(z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom)


@dataclass
class SweepPoint:
    snr_db_main: float
    snr_db_eve_effective: float
    n_symbols: int
    errors_bob: int
    errors_eve: int

    @property
    def ser_bob(self) -> float:
        return self.errors_bob / self.n_symbols

    @property
    def ser_eve(self) -> float:
        return self.errors_eve / self.n_symbols

    @property
    def halfwidth_bob(self) -> float:
        return wilson_halfwidth(self.errors_bob, self.n_symbols)

    @property
    def halfwidth_eve(self) -> float:
        return wilson_halfwidth(self.errors_eve, self.n_symbols)


@dataclass
class SweepResult:
    scenario: str
    points: list[SweepPoint] = field(default_factory=list)

    def snr(self) -> np.ndarray:
        return np.array([p.snr_db_main for p in self.points])

    def ser_bob(self) -> np.ndarray:
        return np.array([p.ser_bob for p in self.points])

    def ser_eve(self) -> np.ndarray:
        return np.array([p.ser_eve for p in self.points])

    def at(self, snr_db: float) -> SweepPoint:
        for p in self.points:
            if abs(p.snr_db_main - snr_db) < 1e-9:
                return p
        raise KeyError(snr_db)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SWEEP_COLUMNS)
            for p in self.points:
                w.writerow([
                    repr(p.snr_db_main), repr(float(p.snr_db_eve_effective)), self.scenario, p.n_symbols,
                    p.errors_bob, repr(p.ser_bob), repr(p.halfwidth_bob),
                    p.errors_eve, repr(p.ser_eve), repr(p.halfwidth_eve),
                ])


def evaluate_point(encoder, bob, eve_decoder, snr_db_main: float, snr_db_eve: float, n_symbols: int, seed: int):
    """Error counts for Bob and for Eve at one grid point.

    The noise stream depends only on (seed, snr_db_main), so different Eve
    decoders see identical Z samples.
    """
    rng = rng_stream(seed, f"eval/{snr_db_main!r}")
    params = ChannelParams(snr_db_to_sigma2(snr_db_main), snr_db_to_sigma2(snr_db_eve))
    table = codec.constellation_real(encoder)
    err_b = err_e = 0
    done = 0
    while done < n_symbols:
        k = min(_CHUNK, n_symbols - done)
        msgs = rng.integers(0, encoder.M, k)
        x = table[msgs]
        y = x + complex_noise(x.shape, params.sigma2_B, rng)
        z = y + complex_noise(x.shape, params.sigma2_E, rng)
        err_b += codec.symbol_errors(msgs, codec.decode(y, bob)[1])
        err_e += codec.symbol_errors(msgs, codec.decode(z, eve_decoder)[1])
        done += k
    return SweepPoint(snr_db_main, params.effective_snr_eve_db, n_symbols, err_b, err_e)


def sweep_ser(encoder, bob, eve, snr_grid, scenario: str = "own", *, n_symbols: int = 100_000,
              eve_snr_db: float = 7.0, seed: int = 0, workers: int | None = None) -> SweepResult:
    """SER of Bob and Eve over the main-link SNR grid, Eve's extra noise held fixed.

    ``scenario="bob"`` decodes Eve's observations with Bob's decoder. Points
    run on a thread pool; each has its own noise stream, so ``workers`` never
    changes the numbers.
    """
    if scenario not in SCENARIOS:
        raise ValueError(f"scenario must be one of {SCENARIOS}")
    if encoder is None or bob is None or (scenario == "own" and eve is None):
        raise MissingArtifactError("sweep needs a trained encoder and decoders")
    eve_dec = bob if scenario == "bob" else eve
    def point(snr):
        return evaluate_point(encoder, bob, eve_dec, float(snr), eve_snr_db, n_symbols, seed)

    with ThreadPoolExecutor(max_workers=workers or min(8, os.cpu_count() or 1)) as pool:
        return SweepResult(scenario, list(pool.map(point, snr_grid)))


def write_qam16(path, snr_grid) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(QAM_COLUMNS)
        for s in snr_grid:
            w.writerow([repr(float(s)), repr(qam16_ser(s))])


def snr_at_ser(snr, ser, target: float = 1e-2) -> float | None:
    """Linear interpolation of log10(SER) vs SNR; None if the curve never crosses ``target``."""
    snr = np.asarray(snr, dtype=float)
    logs = np.log10(np.maximum(np.asarray(ser, dtype=float), 1e-12))
    t = np.log10(target)
    for i in range(len(snr) - 1):
        if logs[i] >= t >= logs[i + 1] and logs[i] != logs[i + 1]:
            return float(snr[i] + (logs[i] - t) / (logs[i] - logs[i + 1]) * (snr[i + 1] - snr[i]))
    return None


def qam16_gap_db(result: SweepResult, target: float = 1e-2) -> float | None:
    """SNR gap between Bob's curve and analytic 16-QAM at SER = ``target``."""
    ours = snr_at_ser(result.snr(), result.ser_bob(), target)
    grid = np.arange(0.0, 30.01, 0.01)
    ref = snr_at_ser(grid, qam16_ser(grid), target)
    if ours is None or ref is None:
        return None
    return ours - ref


# -- runs on disk -------------------------------------------------------------

@dataclass
class RunArtifacts:
    config: RunConfig
    encoder: codec.EncoderModel
    bob: codec.DecoderModel
    eve: codec.DecoderModel


def load_run(run_dir) -> RunArtifacts:
    run_dir = Path(run_dir)
    needed = ["manifest.txt", "encoder.wts", "bob.wts", "eve.wts"]
    for name in needed:
        if not (run_dir / name).exists():
            raise MissingArtifactError(f"{run_dir / name}: missing (train first)")
    cfg = load_config(run_dir / "manifest.txt")
    return RunArtifacts(
        cfg,
        codec.encoder_from_net(nnkit.load_net(run_dir / "encoder.wts")),
        codec.DecoderModel(nnkit.load_net(run_dir / "bob.wts"), "bob"),
        codec.DecoderModel(nnkit.load_net(run_dir / "eve.wts"), "eve"),
    )


def _write(path: Path, writer, *args):
    try:
        writer(path, *args)
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc


def export_models(run_dir, config: RunConfig, encoder, bob, eve, extra_nets=()) -> None:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    _write(run_dir / "manifest.txt", lambda p: p.write_text(config.to_text()))
    _write(run_dir / "schema.txt", lambda p: p.write_text(SCHEMA))
    _write(run_dir / "encoder.wts", lambda p: nnkit.save_net(encoder.net, p))
    _write(run_dir / "bob.wts", lambda p: nnkit.save_net(bob.net, p))
    _write(run_dir / "eve.wts", lambda p: nnkit.save_net(eve.net, p))
    for name, net in extra_nets:
        _write(run_dir / f"{name}.wts", lambda p, net=net: nnkit.save_net(net, p))
    _write(run_dir / "constellation.csv", codec.write_constellation, encoder)


def export_sweeps(run_dir, config: RunConfig, encoder, bob, eve, scenarios=SCENARIOS) -> dict[str, SweepResult]:
    run_dir = Path(run_dir)
    grid = config.snr_grid()
    results = {}
    for sc in scenarios:
        res = sweep_ser(encoder, bob, eve, grid, sc, n_symbols=config.sweep_samples,
                        eve_snr_db=config.sweep_eve_snr_db, seed=config.seed)
        _write(run_dir / f"sweep_{sc}.csv", res.write_csv)
        results[sc] = res
    _write(run_dir / "qam16.csv", write_qam16, grid)
    return results


def export_artifacts(trainer: WiretapTrainer, run_dir, *, sweeps: bool = True) -> dict[str, SweepResult]:
    """Write manifest, telemetry, weights, constellation and sweep CSVs of a finished run."""
    run_dir = Path(run_dir)
    if not trainer.phase_done[3]:
        raise RuntimeError("export needs a completed run (phase 3 not done)")
    export_models(run_dir, trainer.config, trainer.encoder, trainer.bob, trainer.eve,
                  extra_nets=[("mi0", trainer.mi0.stats_net), ("mi1", trainer.mi1.stats_net)])
    _write(run_dir / "telemetry.csv", trainer.write_telemetry)
    _write(run_dir / "mine_telemetry.csv", mine.write_telemetry, [trainer.mi0, trainer.mi1])
    if not sweeps:
        return {}
    return export_sweeps(run_dir, trainer.config, trainer.encoder, trainer.bob, trainer.eve)


def train_and_export(config: RunConfig, run_dir) -> tuple[WiretapTrainer, dict[str, SweepResult]]:
    tr = WiretapTrainer(config).run()
    return tr, export_artifacts(tr, run_dir)


# -- studies ----------------------------------------------------------------

REFERENCE_SNRS = (6.0, 12.0, 15.0, 21.0)


def alpha_study(config: RunConfig, alphas, out_dir) -> list[dict]:
    """One full run per alpha (shared seed); writes per-alpha runs and ``alpha_summary.csv``."""
    out_dir = Path(out_dir)
    rows = []
    for a in alphas:
        cfg = config.replace(alpha=float(a))
        _, res = train_and_export(cfg, out_dir / f"alpha_{a:g}")
        for snr in REFERENCE_SNRS:
            if snr not in res["own"].snr():
                continue
            own, bobdec = res["own"].at(snr), res["bob"].at(snr)
            rows.append({
                "alpha": float(a), "snr_db_main": snr,
                "ser_bob": own.ser_bob, "halfwidth_bob": own.halfwidth_bob,
                "ser_eve_own": own.ser_eve, "halfwidth_eve_own": own.halfwidth_eve,
                "ser_eve_bobdec": bobdec.ser_eve, "halfwidth_eve_bobdec": bobdec.halfwidth_eve,
            })
    _write_rows(out_dir / "alpha_summary.csv", rows)
    return rows


def compare_methods(config: RunConfig, out_dir) -> dict[str, dict]:
    """Train MI+MI, MI+CE and AE+CE with identical seed and alpha; summarize reliability vs security."""
    out_dir = Path(out_dir)
    summary = {}
    rows = []
    for obj in ("mimi", "mice", "aece"):
        tr, res = train_and_export(config.replace(objective=obj), out_dir / obj)
        tail = np.mean(tr.decoder_losses[-50:], axis=0) if tr.decoder_losses else (np.nan, np.nan)
        summary[obj] = {"sweeps": res, "bob_ce": float(tail[0]), "eve_ce": float(tail[1])}
        for p in res["own"].points:
            rows.append({
                "objective": obj, "snr_db_main": p.snr_db_main, "ser_bob": p.ser_bob,
                "ser_eve_own": p.ser_eve, "ser_eve_bobdec": res["bob"].at(p.snr_db_main).ser_eve,
                "bob_train_ce": float(tail[0]), "eve_train_ce": float(tail[1]),
            })
    _write_rows(out_dir / "compare_summary.csv", rows)
    return summary


def _write_rows(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
