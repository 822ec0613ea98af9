"""Experiment configs, Monte Carlo campaigns, and plot-ready result files.

A campaign sweeps one knob (SNR, AoA variation speed, pilot budget, or block
index), runs ``n_frames`` tracking frames per sweep point, and reports the
average tracking error probability with a Wilson 95 % interval plus the
average beamforming gain.  Frame seeds derive from the master seed and the
(point, frame) counters alone, so results are bit-identical no matter how
the frames are spread over worker processes.
"""

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .allocate import STRATEGY_KINDS, StrategyConfig
from .astp import LinkBudget
from .channel import CodebookConfig
from .track import ESTIMATORS, prepare_scenario, run_frame

SWEEP_KINDS = ("snr", "beta", "m_b", "block_index")

# SNR is defined against unit noise power; only the pilot power P moves.
NOISE_VAR = 1.0

_Z95 = 1.959963984540054

CSV_COLUMNS = ("sweep_name", "sweep_value", "strategy", "estimator", "atep",
               "atep_ci95", "avg_gain", "n_frames", "seed")

_DEFAULTS = {
    "codebook": {"n_tx": 64, "n_rx": 64, "x_tx": 64, "x_rx": 64},
    "betas": [0.1, 0.1],
    "snr_db": [-20.0, -18.0, -16.0, -14.0, -12.0, -10.0, -8.0],
    "m_b": 40,
    "t_blocks": 10,
    "n_frames": 2000,
    "gain_var": 1.0,
    "strategy": {"kind": "kkt", "omega": 5.0, "candidate_cap": None},
    "estimator": "power",
    "seed": 1,
    "sweep": "snr",
    "sweep_values": None,
    "m_t": None,
    "m_c": None,
}

# Preset overlays, applied under whatever the config file pins down.  "desk"
# is small enough for laptops and CI; "paper" is the full 64-per-side grid.
_PRESETS = {
    "desk": {
        "codebook": {"n_tx": 4, "n_rx": 4, "x_tx": 4, "x_rx": 4},
        "m_b": 12,
        "n_frames": 2000,
    },
    "paper": {
        "codebook": {"n_tx": 64, "n_rx": 64, "x_tx": 64, "x_rx": 64},
        "m_b": 40,
    },
}


class ConfigError(Exception):
    """Raised when an experiment config cannot be validated."""


@dataclass(frozen=True)
class ExperimentConfig:
    """One campaign: a codebook, a channel model, and a sweep definition.

    m_t and m_c document the per-block symbol budget (block length and the
    conventional full-sweep cost).  They are carried for reporting only; the
    data phase is not simulated.
    """

    codebook: CodebookConfig
    betas: tuple
    snr_db: tuple
    m_b: int
    t_blocks: int
    n_frames: int
    strategy: StrategyConfig
    estimator: str
    seed: int
    sweep: str
    sweep_values: tuple = None
    gain_var: float = 1.0
    m_t: int = None
    m_c: int = None

    def __post_init__(self):
        if len(self.betas) != 2:
            raise ValueError("betas must hold exactly two entries (AoA, AoD)")
        for side, b in zip(("betas[0]", "betas[1]"), self.betas):
            if not 0.0 <= b <= 1.0:
                raise ValueError(f"{side} must lie in [0, 1], got {b}")
        if len(self.snr_db) == 0:
            raise ValueError("snr_db must be a non-empty list of dB values")
        if self.m_b < 1:
            raise ValueError(f"m_b must be at least 1, got {self.m_b}")
        if self.t_blocks < 2:
            raise ValueError(
                f"t_blocks must be at least 2 (block 1 is never tracked), "
                f"got {self.t_blocks}")
        if self.n_frames < 1:
            raise ValueError(f"n_frames must be at least 1, got {self.n_frames}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(
                f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if self.sweep not in SWEEP_KINDS:
            raise ValueError(
                f"sweep must be one of {SWEEP_KINDS}, got {self.sweep!r}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in 64 bits")
        if self.gain_var <= 0:
            raise ValueError(f"gain_var must be positive, got {self.gain_var}")
        for name, val in (("m_t", self.m_t), ("m_c", self.m_c)):
            if val is not None and val < 1:
                raise ValueError(f"{name} must be a positive symbol count")
        if self.sweep in ("beta", "m_b"):
            if not self.sweep_values:
                raise ValueError(
                    f"sweep_values must list the swept {self.sweep} values")
            if self.sweep == "beta":
                for v in self.sweep_values:
                    if not 0.0 <= v <= 1.0:
                        raise ValueError(
                            f"sweep_values entries must lie in [0, 1], got {v}")
            else:
                for v in self.sweep_values:
                    if int(v) != v or v < 1:
                        raise ValueError(
                            f"sweep_values entries must be budgets >= 1, got {v}")
        elif self.sweep_values is not None:
            raise ValueError(
                "sweep_values applies only to beta and m_b sweeps")


@dataclass(frozen=True)
class MetricsRecord:
    """Aggregated metrics for one sweep point.

    error is None for clean points; a failed point keeps its sweep_value,
    carries the failure message, and reports nan metrics.
    """

    sweep_value: float
    atep: float
    atep_ci95: float
    avg_beamforming_gain: float
    per_block_atep: tuple
    wall_time: float
    error: str = None

    def __post_init__(self):
        if self.error is None:
            if not 0.0 <= self.atep <= 1.0:
                raise ValueError(f"atep must lie in [0, 1], got {self.atep}")
            if self.atep_ci95 < 0.0:
                raise ValueError("atep_ci95 must be nonnegative")


def wilson_interval(k, n):
    """Wilson 95 % interval for k successes out of n: (center, half_width)."""
    if n < 1:
        raise ValueError("need at least one trial")
    z2 = _Z95 * _Z95
    p = k / n
    denom = 1.0 + z2 / n
    center = (p + z2 / (2.0 * n)) / denom
    half = _Z95 * math.sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom
    return center, half


def _merge_overlay(base, overlay):
    out = dict(base)
    for key, val in overlay.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge_overlay(out[key], val)
        else:
            out[key] = val
    return out


def _require_keys(raw, allowed, where):
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise ConfigError(
            f"unknown key{'s' if len(unknown) > 1 else ''} in {where}: "
            + ", ".join(unknown))


def load_config(path, preset=None):
    """Read a JSON config, overlay it on the preset and global defaults.

    Unknown keys are rejected rather than ignored so a typo cannot silently
    fall back to a default.
    """
    raw = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
    if preset is not None:
        if preset not in _PRESETS:
            raise ConfigError(
                f"preset must be one of {tuple(_PRESETS)}, got {preset!r}")
    _require_keys(raw, _DEFAULTS, "config")
    if isinstance(raw.get("codebook"), dict):
        _require_keys(raw["codebook"], _DEFAULTS["codebook"], "codebook")
    if isinstance(raw.get("strategy"), dict):
        _require_keys(raw["strategy"], _DEFAULTS["strategy"], "strategy")

    resolved = _DEFAULTS
    if preset is not None:
        resolved = _merge_overlay(resolved, _PRESETS[preset])
    resolved = _merge_overlay(resolved, raw)

    try:
        codebook = CodebookConfig(**resolved["codebook"])
        strategy = StrategyConfig(**resolved["strategy"])
        sweep_values = resolved["sweep_values"]
        return ExperimentConfig(
            codebook=codebook,
            betas=tuple(float(b) for b in resolved["betas"]),
            snr_db=tuple(float(s) for s in resolved["snr_db"]),
            m_b=int(resolved["m_b"]),
            t_blocks=int(resolved["t_blocks"]),
            n_frames=int(resolved["n_frames"]),
            strategy=strategy,
            estimator=resolved["estimator"],
            seed=int(resolved["seed"]),
            sweep=resolved["sweep"],
            sweep_values=None if sweep_values is None
            else tuple(float(v) for v in sweep_values),
            gain_var=float(resolved["gain_var"]),
            m_t=resolved["m_t"],
            m_c=resolved["m_c"],
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def config_echo(config):
    """Every resolved setting, for the JSON output header."""
    return {
        "codebook": {"n_tx": config.codebook.n_tx, "n_rx": config.codebook.n_rx,
                     "x_tx": config.codebook.x_tx, "x_rx": config.codebook.x_rx},
        "betas": list(config.betas),
        "snr_db": list(config.snr_db),
        "m_b": config.m_b,
        "t_blocks": config.t_blocks,
        "n_frames": config.n_frames,
        "strategy": {"kind": config.strategy.kind, "omega": config.strategy.omega,
                     "candidate_cap": config.strategy.candidate_cap},
        "estimator": config.estimator,
        "seed": config.seed,
        "sweep": config.sweep,
        "sweep_values": None if config.sweep_values is None
        else list(config.sweep_values),
        "gain_var": config.gain_var,
        "m_t": config.m_t,
        "m_c": config.m_c,
        "noise_var": NOISE_VAR,
        "transition_distance": "linear",
        "omega_normalized_by_noise": True,
    }


def _sweep_points(config):
    """(sweep_value, scenario overrides) per point; block_index has one run."""
    base_power = 10.0 ** (config.snr_db[0] / 10.0)
    if config.sweep == "snr":
        return [(db, {"power": 10.0 ** (db / 10.0)}) for db in config.snr_db]
    if config.sweep == "beta":
        return [(b, {"power": base_power, "beta_rx": b})
                for b in config.sweep_values]
    if config.sweep == "m_b":
        return [(m, {"power": base_power, "m_b": int(m)})
                for m in config.sweep_values]
    return [(float("nan"), {"power": base_power})]


def _scenario_args(config, overrides):
    cb = config.codebook
    return (cb.n_tx, cb.n_rx, cb.x_tx, cb.x_rx,
            overrides.get("beta_rx", config.betas[0]), config.betas[1],
            overrides["power"], NOISE_VAR, config.gain_var,
            overrides.get("m_b", config.m_b), config.t_blocks,
            config.strategy.kind, config.strategy.omega,
            config.strategy.candidate_cap, config.estimator)


def _run_chunk(task):
    """Run frames [lo, hi) of one sweep point; must stay picklable."""
    (args, seed, point_idx, lo, hi) = task
    (n_tx, n_rx, x_tx, x_rx, beta_rx, beta_tx, power, noise_var, gain_var,
     m_b, t_blocks, kind, omega, cap, estimator) = args
    codebook = CodebookConfig(n_tx=n_tx, n_rx=n_rx, x_tx=x_tx, x_rx=x_rx)
    budget = LinkBudget(power=power, noise_var=noise_var, gain_var=gain_var,
                        n_tx=n_tx, n_rx=n_rx)
    strategy = StrategyConfig(kind=kind, omega=omega, candidate_cap=cap)
    scenario = prepare_scenario(codebook, beta_rx, beta_tx, budget, m_b,
                                t_blocks, strategy, estimator)
    hits = np.empty((hi - lo, t_blocks - 1), dtype=bool)
    gains = np.empty((hi - lo, t_blocks - 1))
    for row, frame in enumerate(range(lo, hi)):
        out = run_frame(scenario,
                        np.random.SeedSequence(seed, spawn_key=(point_idx, frame)))
        hits[row] = out.hits
        gains[row] = out.gains
    return hits, gains


def _run_point(config, overrides, point_idx, workers):
    args = _scenario_args(config, overrides)
    n = config.n_frames
    if workers <= 1 or n < 2 * workers:
        return _run_chunk((args, config.seed, point_idx, 0, n))
    bounds = np.linspace(0, n, workers + 1).astype(int)
    tasks = [(args, config.seed, point_idx, int(lo), int(hi))
             for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_run_chunk, tasks))
    # frame seeds depend only on (point, frame), so stitching the chunks back
    # in frame order erases the worker count from the result
    hits = np.vstack([p[0] for p in parts])
    gains = np.vstack([p[1] for p in parts])
    return hits, gains


def _point_record(value, hits, gains, wall):
    n_frames, tracked = hits.shape
    misses = hits.size - int(np.count_nonzero(hits))
    _, half = wilson_interval(misses, hits.size)
    per_block = tuple(1.0 - np.mean(hits, axis=0))
    return MetricsRecord(
        sweep_value=value,
        atep=misses / hits.size,
        atep_ci95=half,
        avg_beamforming_gain=float(np.mean(gains)),
        per_block_atep=per_block,
        wall_time=wall,
    )


def _error_record(value, message, wall):
    return MetricsRecord(sweep_value=value, atep=float("nan"),
                         atep_ci95=float("nan"),
                         avg_beamforming_gain=float("nan"),
                         per_block_atep=(), wall_time=wall, error=message)


def run_campaign(config, workers=1):
    """Run every sweep point; a failed point yields an error record and the
    campaign moves on."""
    records = []
    for point_idx, (value, overrides) in enumerate(_sweep_points(config)):
        start = time.perf_counter()
        try:
            hits, gains = _run_point(config, overrides, point_idx, workers)
        except (ValueError, ArithmeticError) as exc:
            records.append(_error_record(value, str(exc),
                                         time.perf_counter() - start))
            continue
        wall = time.perf_counter() - start
        if config.sweep == "block_index":
            # one run, reported block by block
            per_block = 1.0 - np.mean(hits, axis=0)
            n = hits.shape[0]
            for offset, blk_atep in enumerate(per_block):
                misses = n - int(np.count_nonzero(hits[:, offset]))
                _, half = wilson_interval(misses, n)
                records.append(MetricsRecord(
                    sweep_value=float(offset + 2),
                    atep=float(blk_atep),
                    atep_ci95=half,
                    avg_beamforming_gain=float(np.mean(gains[:, offset])),
                    per_block_atep=tuple(per_block),
                    wall_time=wall,
                ))
        else:
            records.append(_point_record(value, hits, gains, wall))
    return records


def _format_value(value, sweep):
    if isinstance(value, float) and math.isnan(value):
        return "nan"
    if sweep in ("m_b", "block_index"):
        return str(int(value))
    return repr(float(value))


def emit_results(records, fmt, path, config):
    """Write the campaign results as CSV rows or a JSON document."""
    if not records:
        raise ValueError("no records to emit")
    if fmt == "csv":
        lines = [",".join(CSV_COLUMNS)]
        for rec in records:
            lines.append(",".join((
                config.sweep,
                _format_value(rec.sweep_value, config.sweep),
                config.strategy.kind,
                config.estimator,
                repr(float(rec.atep)),
                repr(float(rec.atep_ci95)),
                repr(float(rec.avg_beamforming_gain)),
                str(config.n_frames),
                str(config.seed),
            )))
        text = "\n".join(lines) + "\n"
    elif fmt == "json":
        doc = {
            "config": config_echo(config),
            "records": [{
                "sweep_name": config.sweep,
                "sweep_value": rec.sweep_value,
                "strategy": config.strategy.kind,
                "estimator": config.estimator,
                "atep": rec.atep,
                "atep_ci95": rec.atep_ci95,
                "avg_gain": rec.avg_beamforming_gain,
                "n_frames": config.n_frames,
                "seed": config.seed,
                "per_block_atep": list(rec.per_block_atep),
                "wall_time": rec.wall_time,
                "error": rec.error,
            } for rec in records],
        }
        text = json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n"
    else:
        raise ValueError(f"format must be csv or json, got {fmt!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _estimate_runtime(config):
    points = 1 if config.sweep == "block_index" else (
        len(config.snr_db) if config.sweep == "snr" else len(config.sweep_values))
    blocks = points * config.n_frames * (config.t_blocks - 1)
    # ballpark per-block cost grows with the grid the estimator correlates over
    per_block = 2e-5 * max(1.0, config.codebook.x_pairs / 16.0)
    return blocks, blocks * per_block


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="beamtrack",
        description="Monte Carlo beam tracking campaigns over Markov "
                    "AoA/AoD channels.")
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run a campaign and write metrics")
    run_p.add_argument("--config", default=None,
                       help="JSON experiment config (optional with --preset)")
    run_p.add_argument("--out", required=True, help="output file path")
    run_p.add_argument("--format", choices=("csv", "json"), default="csv")
    run_p.add_argument("--workers", type=int, default=1)
    run_p.add_argument("--preset", choices=tuple(_PRESETS), default=None)
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        config = load_config(args.config, preset=args.preset)
        env_seed = os.environ.get("BEAMTRACK_SEED")
        if env_seed is not None:
            try:
                config = replace(config, seed=int(env_seed))
            except ValueError as exc:
                raise ConfigError(
                    f"BEAMTRACK_SEED must be an integer, got {env_seed!r}"
                ) from exc
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        if args.preset == "paper":
            blocks, seconds = _estimate_runtime(config)
            print(f"paper preset: {blocks} tracked blocks queued, "
                  f"roughly {seconds / 60.0:.1f} min at desk-calibrated speed",
                  file=sys.stderr)
        records = run_campaign(config, workers=args.workers)
        emit_results(records, args.format, args.out, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cannot write results: {exc}", file=sys.stderr)
        return 2
    failures = [rec for rec in records if rec.error is not None]
    for rec in failures:
        print(f"point {rec.sweep_value}: {rec.error}", file=sys.stderr)
    return 3 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
