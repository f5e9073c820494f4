"""Experiment runner: SNR sweep, pilot-length sweep, mobility frames.

Every cell (one axis value, one trial seed) generates a single (H, X, Y)
triple that all configured estimators consume, so comparisons are paired;
the triple's content hash is stored in each row.  Cells are independent
and deterministic given the config, which makes the emitted CSV
byte-reproducible; set CHANEST_THREADS to evaluate cells in parallel.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field, replace

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .denoiser import DenoiserConfig, UNetConfig, denoise
from .estimators import lmmse_estimate, ls_estimate, nmse
from .mimo import (
    ChannelModelConfig,
    MobilityScenario,
    channel_correlation,
    evolve_channel,
    gen_channel,
    gen_pilots,
    noise_variance,
    transmit,
)

logger = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentResult",
    "parse_config",
    "default_config",
    "apply_small_profile",
    "run_snr_sweep",
    "run_pilot_sweep",
    "run_mobility",
    "run_denoise_once",
    "run_scenario",
    "emit_csv",
    "load_results_csv",
]

SCENARIOS = ("snr-sweep", "pilot-sweep", "mobility", "denoise-once")
ESTIMATORS = ("ls", "lmmse", "mmse", "s2s")


class ConfigError(ValueError):
    """Raised for unreadable, malformed or invariant-violating configs."""


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "snr-sweep"
    channel: ChannelModelConfig = field(default_factory=ChannelModelConfig)
    snr_axis: tuple[float, ...] = (0.0, 3.0, 6.0, 9.0, 12.0, 15.0, 18.0)
    pilot_axis: tuple[int, ...] = (44, 48, 52, 56, 60)
    pilot_len: int = 48
    sweep_snr_db: float = 10.0
    n_frames: int = 9
    hold_frames: int = 3
    aoa_drift: float = math.radians(2.0)
    estimators: tuple[str, ...] = ESTIMATORS
    seeds: tuple[int, ...] = tuple(range(10))
    seed_base: int = 0
    n_cov_samples: int = 10_000
    unet: UNetConfig = field(default_factory=UNetConfig)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    out: str | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        for name in self.estimators:
            if name not in ESTIMATORS:
                raise ConfigError(f"unknown estimator {name!r}; expected subset of {ESTIMATORS}")
        if not self.estimators:
            raise ConfigError("estimator list must not be empty")
        if not self.snr_axis:
            raise ConfigError("snr_db axis must not be empty")
        if not self.pilot_axis:
            raise ConfigError("pilot_lens axis must not be empty")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.pilot_len < self.channel.n_tx:
            raise ConfigError(
                f"pilot_len = {self.pilot_len} is shorter than n_tx = {self.channel.n_tx}; "
                "least squares needs pilot_len >= n_tx"
            )
        for length in self.pilot_axis:
            if length < self.channel.n_tx:
                raise ConfigError(
                    f"pilot_lens entry {length} is shorter than n_tx = {self.channel.n_tx}"
                )
        if self.n_frames < 1 or not 0 <= self.hold_frames <= self.n_frames:
            raise ConfigError("need n_frames >= 1 and 0 <= hold_frames <= n_frames")
        if self.n_cov_samples < 1:
            raise ConfigError("n_cov_samples must be positive")


@dataclass
class ExperimentResult:
    scenario: str
    estimator: str
    axis: float
    seed: int
    nmse: float
    nmse_db: float
    wall_s: float
    input_hash: str

    def __post_init__(self):
        if self.nmse < 0:
            raise ValueError("nmse must be non-negative")


# config file schema: flat keys -> (caster, description)

def _float_list(v):
    if not isinstance(v, list) or not v:
        raise ConfigError("expected a non-empty array")
    return tuple(float(x) for x in v)


def _int_list(v):
    if not isinstance(v, list) or not v:
        raise ConfigError("expected a non-empty array")
    return tuple(int(x) for x in v)


_SCHEMA = {
    "n_rx": int,
    "n_tx": int,
    "n_paths": int,
    "los": bool,
    "angle_spread": float,
    "los_power": float,
    "channel_seed": int,
    "snr_db": _float_list,
    "pilot_len": int,
    "pilot_lens": _int_list,
    "sweep_snr_db": float,
    "n_frames": int,
    "hold_frames": int,
    "aoa_drift_deg": float,
    "estimators": lambda v: tuple(str(x) for x in v),
    "seeds": _int_list,
    "n_seeds": int,
    "seed_base": int,
    "n_cov_samples": int,
    "depth": int,
    "dropout_rate": float,
    "p_drop": float,
    "iterations": int,
    "ensemble": int,
    "learning_rate": float,
    "out": str,
}


def default_config(scenario: str = "snr-sweep") -> ExperimentConfig:
    return ExperimentConfig(scenario=scenario)


def _flatten_toml(doc: dict) -> dict:
    """Merge one level of section tables into the flat key space."""
    flat: dict = {}
    for key, value in doc.items():
        if isinstance(value, dict):
            for inner, iv in value.items():
                if isinstance(iv, dict):
                    raise ConfigError(f"nested table {key}.{inner} is not supported")
                if inner in flat:
                    raise ConfigError(f"duplicate key {inner!r} (in table {key!r})")
                flat[inner] = iv
        else:
            if key in flat:
                raise ConfigError(f"duplicate key {key!r}")
            flat[key] = value
    return flat


def parse_config(path, scenario: str = "snr-sweep") -> ExperimentConfig:
    """Build an ExperimentConfig from a TOML file; unset keys take defaults.

    Unknown keys are rejected so typos do not silently fall back to
    defaults.
    """
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"syntax error in {path}: {exc}")

    flat = _flatten_toml(doc)
    values: dict = {}
    for key, raw in flat.items():
        caster = _SCHEMA.get(key)
        if caster is None:
            raise ConfigError(f"unknown key {key!r} in {path}")
        try:
            values[key] = caster(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r} in {path}: {exc}")
    return build_config(scenario, values)


def build_config(scenario: str, values: dict) -> ExperimentConfig:
    """Assemble the nested config dataclasses from flat key/value pairs."""
    channel_kwargs = {}
    for src, dst in (("n_rx", "n_rx"), ("n_tx", "n_tx"), ("n_paths", "n_paths"),
                     ("los", "los"), ("angle_spread", "angle_spread"),
                     ("los_power", "los_power"), ("channel_seed", "seed")):
        if src in values:
            channel_kwargs[dst] = values[src]
    unet_kwargs = {k: values[k] for k in ("depth", "dropout_rate") if k in values}
    den_kwargs = {k: values[k] for k in ("p_drop", "iterations", "ensemble", "learning_rate")
                  if k in values}

    if "seeds" in values:
        seeds = values["seeds"]
    else:
        base = values.get("seed_base", 0)
        seeds = tuple(range(base, base + values.get("n_seeds", 10)))

    top: dict = {"scenario": scenario, "seeds": seeds}
    if "snr_db" in values:
        top["snr_axis"] = values["snr_db"]
    if "pilot_lens" in values:
        top["pilot_axis"] = values["pilot_lens"]
    for src, dst in (("pilot_len", "pilot_len"), ("sweep_snr_db", "sweep_snr_db"),
                     ("n_frames", "n_frames"), ("hold_frames", "hold_frames"),
                     ("estimators", "estimators"), ("seed_base", "seed_base"),
                     ("n_cov_samples", "n_cov_samples"), ("out", "out")):
        if src in values:
            top[dst] = values[src]
    if "aoa_drift_deg" in values:
        top["aoa_drift"] = math.radians(values["aoa_drift_deg"])

    try:
        return ExperimentConfig(
            channel=ChannelModelConfig(**channel_kwargs),
            unet=UNetConfig(**unet_kwargs),
            denoiser=DenoiserConfig(**den_kwargs),
            **top,
        )
    except ValueError as exc:
        raise ConfigError(str(exc))


def apply_small_profile(cfg: ExperimentConfig) -> ExperimentConfig:
    """CI-sized profile: 16x8 channel, depth-3 network, short pilots."""
    return replace(
        cfg,
        channel=replace(cfg.channel, n_rx=16, n_tx=8),
        unet=replace(cfg.unet, depth=3),
        denoiser=replace(cfg.denoiser, iterations=500),
        pilot_len=12,
        pilot_axis=(10, 12, 14, 16),
        n_cov_samples=2000,
    )


def _triple_hash(channel: np.ndarray, received: np.ndarray, pilots: np.ndarray) -> str:
    digest = hashlib.sha256()
    for arr in (channel, received, pilots):
        digest.update(np.ascontiguousarray(arr).tobytes())
    return digest.hexdigest()[:16]


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(tuple(parts)).generate_state(1)[0])


def _evaluate_cell(cfg: ExperimentConfig, axis_value: float, axis_idx: int, seed: int,
                   channel: np.ndarray, pilots: np.ndarray, received: np.ndarray,
                   snr_db: float) -> list[ExperimentResult]:
    """Run every configured estimator on one shared (H, X, Y) triple."""
    tag = _triple_hash(channel, received, pilots)
    var = noise_variance(channel, pilots, snr_db)
    rows = []

    corr = None
    if "lmmse" in cfg.estimators or "mmse" in cfg.estimators:
        cov_rng = np.random.default_rng([cfg.seed_base, 0xC0F, seed])
        corr = channel_correlation(replace(cfg.channel, seed=seed), cfg.n_cov_samples, cov_rng)

    shared_lmmse: np.ndarray | None = None
    for name in cfg.estimators:
        t0 = time.perf_counter()
        if name == "ls":
            estimate = ls_estimate(received, pilots)
        elif name in ("lmmse", "mmse"):
            # the oracle bound is LMMSE with the same empirical covariance,
            # so both rows carry the identical estimate by construction
            if shared_lmmse is None:
                shared_lmmse = lmmse_estimate(received, pilots, corr, var)
            estimate = shared_lmmse
        elif name == "s2s":
            den = replace(cfg.denoiser, seed=_derived_seed(cfg.seed_base, axis_idx, seed))
            estimate, report = denoise(received, pilots, cfg.unet, den, true_channel=channel)
            logger.info("s2s cell axis=%s seed=%d: in %.3g out %.3g (train %.1fs)",
                        axis_value, seed, report.input_nmse, report.output_nmse,
                        report.train_seconds)
        else:  # pragma: no cover - guarded by config validation
            raise ValueError(f"unknown estimator {name}")
        err = nmse(estimate, channel)
        rows.append(ExperimentResult(
            scenario=cfg.scenario, estimator=name, axis=float(axis_value), seed=seed,
            nmse=err, nmse_db=10.0 * math.log10(err) if err > 0 else -math.inf,
            wall_s=time.perf_counter() - t0, input_hash=tag,
        ))
    return rows


def _sweep_cell(cfg: ExperimentConfig, axis_idx: int, seed: int) -> list[ExperimentResult]:
    """One (axis value, seed) cell of an SNR or pilot-length sweep."""
    if cfg.scenario == "pilot-sweep":
        snr_db = cfg.sweep_snr_db
        pilot_len = cfg.pilot_axis[axis_idx]
        axis_value = float(pilot_len)
    else:
        snr_db = cfg.snr_axis[axis_idx]
        pilot_len = cfg.pilot_len
        axis_value = snr_db
    ch_cfg = replace(cfg.channel, seed=seed)
    rng = np.random.default_rng([cfg.seed_base, axis_idx, seed])
    channel = gen_channel(ch_cfg, rng)
    pilots = gen_pilots(ch_cfg.n_tx, pilot_len)
    received = transmit(channel, pilots, snr_db, rng)
    return _evaluate_cell(cfg, axis_value, axis_idx, seed, channel, pilots, received, snr_db)


def _mobility_cell(cfg: ExperimentConfig, axis_idx: int, seed: int) -> list[ExperimentResult]:
    """One (frame, seed) cell; frames in the hold period reuse one triple."""
    frame = axis_idx + 1
    scenario = MobilityScenario(cfg.n_frames, cfg.hold_frames, cfg.aoa_drift)
    ch_cfg = replace(cfg.channel, seed=seed)
    channel = evolve_channel(ch_cfg, scenario, frame, _derived_seed(cfg.seed_base, seed))
    pilots = gen_pilots(ch_cfg.n_tx, cfg.pilot_len)
    # a held receiver reuses the frame-1 transmission, so held frames share
    # the full (H, Y, X) triple and hash
    noise_frame = frame if frame > cfg.hold_frames else 1
    rng = np.random.default_rng([cfg.seed_base, noise_frame, seed])
    received = transmit(channel, pilots, cfg.sweep_snr_db, rng)
    return _evaluate_cell(cfg, float(frame), axis_idx, seed, channel, pilots, received,
                          cfg.sweep_snr_db)


def _worker_count() -> int:
    raw = os.environ.get("CHANEST_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"CHANEST_THREADS must be an integer, got {raw!r}")
    return max(1, n)


def _run_cells(cfg: ExperimentConfig, cell_fn, n_axis: int) -> list[ExperimentResult]:
    jobs = [(axis_idx, seed) for axis_idx in range(n_axis) for seed in cfg.seeds]
    workers = _worker_count()
    if workers == 1:
        batches = [cell_fn(cfg, a, s) for a, s in jobs]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(cell_fn, cfg, a, s) for a, s in jobs]
            batches = [f.result() for f in futures]
    rows = [row for batch in batches for row in batch]
    rows.sort(key=lambda r: (r.axis, r.estimator, r.seed))
    return rows


def run_snr_sweep(cfg: ExperimentConfig) -> list[ExperimentResult]:
    """NMSE of every estimator across the SNR axis (paired per cell)."""
    return _run_cells(cfg, _sweep_cell, len(cfg.snr_axis))


def run_pilot_sweep(cfg: ExperimentConfig) -> list[ExperimentResult]:
    """NMSE of every estimator across pilot lengths at the fixed sweep SNR."""
    return _run_cells(cfg, _sweep_cell, len(cfg.pilot_axis))


def run_mobility(cfg: ExperimentConfig) -> list[ExperimentResult]:
    """Per-frame NMSE; the denoiser retrains from scratch every frame."""
    return _run_cells(cfg, _mobility_cell, cfg.n_frames)


def run_denoise_once(cfg: ExperimentConfig) -> list[ExperimentResult]:
    """Single-cell run at the fixed sweep SNR using the first seed."""
    once = replace(cfg, snr_axis=(cfg.sweep_snr_db,), seeds=(cfg.seeds[0],))
    return _sweep_cell(once, 0, cfg.seeds[0])


def run_scenario(cfg: ExperimentConfig) -> list[ExperimentResult]:
    runner = {
        "snr-sweep": run_snr_sweep,
        "pilot-sweep": run_pilot_sweep,
        "mobility": run_mobility,
        "denoise-once": run_denoise_once,
    }[cfg.scenario]
    return runner(cfg)


CSV_HEADER = "scenario,estimator,axis,seed,nmse,nmse_db,wall_s,input_hash"


def emit_csv(results: list[ExperimentResult], path) -> None:
    """Write results in deterministic order with 9-significant-digit floats.

    The wall_s column is zeroed by default so identical configs re-emit
    byte-identical files; set CHANEST_CSV_TIMINGS=1 to record real timings
    (timings always go to the log regardless).
    """
    if not results:
        raise ValueError("no results to emit")
    keep_timings = os.environ.get("CHANEST_CSV_TIMINGS", "0") == "1"
    rows = sorted(results, key=lambda r: (r.axis, r.estimator, r.seed))
    try:
        with open(path, "w") as fh:
            fh.write(CSV_HEADER + "\n")
            for r in rows:
                wall = r.wall_s if keep_timings else 0.0
                fh.write(f"{r.scenario},{r.estimator},{r.axis:.9g},{r.seed},"
                         f"{r.nmse:.9g},{r.nmse_db:.9g},{wall:.9g},{r.input_hash}\n")
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}")


def load_results_csv(path) -> list[ExperimentResult]:
    """Parse a results CSV back into ExperimentResult rows."""
    out = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"unexpected header {header!r}")
        for line in fh:
            if not line.strip():
                continue
            sc, est, axis, seed, err, err_db, wall, tag = line.strip().split(",")
            out.append(ExperimentResult(sc, est, float(axis), int(seed), float(err),
                                        float(err_db), float(wall), tag))
    return out
