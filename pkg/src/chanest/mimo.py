"""Synthetic MIMO channel, pilot and received-signal generation.

A geometric multipath model over half-wavelength uniform linear arrays
stands in for a full ray-tracing generator: path angles are fixed per
configuration, path gains are redrawn per realization, and the channel is
normalized so that E||H||_F^2 = n_rx * n_tx.  Pilots are unit-modulus DFT
rows, so X X^H = L I exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "ChannelModelConfig",
    "MobilityScenario",
    "steering_vector",
    "path_angles",
    "gen_channel",
    "gen_pilots",
    "noise_variance",
    "transmit",
    "channel_correlation",
    "evolve_channel",
    "vec",
    "unvec",
    "save_matrix_csv",
    "load_matrix_csv",
]


@dataclass(frozen=True)
class ChannelModelConfig:
    """Geometry and statistics of the multipath channel generator.

    Path angles are a deterministic function of ``seed`` (or the explicit
    ``aoa``/``aod`` overrides); only the path gains consume the generator
    passed to :func:`gen_channel`.  When ``los`` is set, path 0 carries a
    fixed (non-random) gain holding ``los_power`` of the total channel power.
    """

    n_rx: int = 64
    n_tx: int = 32
    n_paths: int = 8
    los: bool = True
    angle_spread: float = math.pi / 16
    seed: int = 0
    los_power: float = 0.5
    aoa: tuple[float, ...] | None = None
    aod: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.n_rx < 1 or self.n_tx < 1:
            raise ValueError("antenna counts must be positive")
        if self.n_paths < 1:
            raise ValueError("n_paths must be at least 1")
        if not 0.0 <= self.angle_spread < math.pi / 2:
            raise ValueError("angle_spread must lie in [0, pi/2)")
        if not 0.0 <= self.los_power <= 1.0:
            raise ValueError("los_power must lie in [0, 1]")
        for name, angles in (("aoa", self.aoa), ("aod", self.aod)):
            if angles is not None:
                if len(angles) != self.n_paths:
                    raise ValueError(f"{name} must list one angle per path")
                if any(not -math.pi / 2 < a < math.pi / 2 for a in angles):
                    raise ValueError(f"{name} angles must lie in (-pi/2, pi/2)")


@dataclass(frozen=True)
class MobilityScenario:
    """Frame sequence with a position hold followed by steady AoA drift."""

    n_frames: int = 9
    hold_frames: int = 3
    aoa_drift: float = math.radians(2.0)

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError("n_frames must be positive")
        if not 0 <= self.hold_frames <= self.n_frames:
            raise ValueError("hold_frames must lie in [0, n_frames]")


def steering_vector(n: int, angle: float) -> np.ndarray:
    """Unit-norm ULA response, entry k = exp(-j*pi*k*sin(angle)) / sqrt(n)."""
    k = np.arange(n)
    return np.exp(-1j * math.pi * k * math.sin(angle)) / math.sqrt(n)


def path_angles(cfg: ChannelModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-path (AoA, AoD), honoring explicit overrides in the config."""
    if cfg.aoa is not None and cfg.aod is not None:
        return np.asarray(cfg.aoa, dtype=float), np.asarray(cfg.aod, dtype=float)
    rng = np.random.default_rng(cfg.seed)
    aoa = rng.uniform(-cfg.angle_spread, cfg.angle_spread, cfg.n_paths)
    aod = rng.uniform(-cfg.angle_spread, cfg.angle_spread, cfg.n_paths)
    if cfg.aoa is not None:
        aoa = np.asarray(cfg.aoa, dtype=float)
    if cfg.aod is not None:
        aod = np.asarray(cfg.aod, dtype=float)
    return aoa, aod


def _gain_scales(cfg: ChannelModelConfig) -> tuple[float, np.ndarray]:
    """Fixed line-of-sight amplitude and per-NLOS-path standard deviations.

    Scaled so the expected total gain power is n_paths, which together with
    the sqrt(n_rx*n_tx/n_paths) channel prefactor normalizes E||H||_F^2.
    """
    p = cfg.n_paths
    if not cfg.los:
        return 0.0, np.ones(p)
    if p == 1:
        return 1.0, np.zeros(0)
    los_amp = math.sqrt(cfg.los_power * p)
    nlos_std = math.sqrt((1.0 - cfg.los_power) * p / (p - 1))
    return los_amp, np.full(p - 1, nlos_std)


def _draw_gains(cfg: ChannelModelConfig, rng: np.random.Generator) -> np.ndarray:
    los_amp, nlos_std = _gain_scales(cfg)
    if not cfg.los:
        z = rng.standard_normal((cfg.n_paths, 2))
        return (z[:, 0] + 1j * z[:, 1]) / math.sqrt(2.0)
    gains = np.empty(cfg.n_paths, dtype=complex)
    gains[0] = los_amp
    if cfg.n_paths > 1:
        z = rng.standard_normal((cfg.n_paths - 1, 2))
        gains[1:] = nlos_std * (z[:, 0] + 1j * z[:, 1]) / math.sqrt(2.0)
    return gains


def _steering_matrices(cfg: ChannelModelConfig) -> tuple[np.ndarray, np.ndarray]:
    aoa, aod = path_angles(cfg)
    a_rx = np.stack([steering_vector(cfg.n_rx, a) for a in aoa], axis=1)
    a_tx = np.stack([steering_vector(cfg.n_tx, a) for a in aod], axis=1)
    return a_rx, a_tx


def gen_channel(cfg: ChannelModelConfig, rng: np.random.Generator) -> np.ndarray:
    """Draw one n_rx x n_tx channel: sqrt(N_r N_t / P) * sum_p gain_p a_rx a_tx^H."""
    a_rx, a_tx = _steering_matrices(cfg)
    gains = _draw_gains(cfg, rng)
    scale = math.sqrt(cfg.n_rx * cfg.n_tx / cfg.n_paths)
    return scale * (a_rx * gains) @ a_tx.conj().T


def gen_pilots(n_tx: int, pilot_len: int) -> np.ndarray:
    """First n_tx rows of the pilot_len-point DFT matrix (unit-modulus symbols).

    Rows are exactly orthogonal: X X^H = pilot_len * I.
    """
    if pilot_len < n_tx:
        raise ValueError(
            f"pilot_len ({pilot_len}) must be at least n_tx ({n_tx}); "
            "shorter pilots leave the least-squares system underdetermined"
        )
    k = np.arange(n_tx)[:, None]
    n = np.arange(pilot_len)[None, :]
    return np.exp(-2j * math.pi * k * n / pilot_len)


def noise_variance(channel: np.ndarray, pilots: np.ndarray, snr_db: float) -> float:
    """Per-entry complex noise variance for a target per-realization SNR."""
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    signal = channel @ pilots
    sig_power = float(np.vdot(signal, signal).real) / signal.size
    return sig_power / 10.0 ** (snr_db / 10.0)


def transmit(channel: np.ndarray, pilots: np.ndarray, snr_db: float,
             rng: np.random.Generator) -> np.ndarray:
    """Y = H X + N with circularly symmetric white Gaussian noise."""
    if channel.shape[1] != pilots.shape[0]:
        raise ValueError(
            f"channel has {channel.shape[1]} tx antennas but pilots have {pilots.shape[0]} rows"
        )
    signal = channel @ pilots
    var = noise_variance(channel, pilots, snr_db)
    if var == 0.0:
        return signal
    sd = math.sqrt(var / 2.0)
    noise = sd * (rng.standard_normal(signal.shape) + 1j * rng.standard_normal(signal.shape))
    return signal + noise


def channel_correlation(cfg: ChannelModelConfig, n_samples: int,
                        rng: np.random.Generator) -> np.ndarray:
    """Empirical covariance (1/n) sum vec(H_i) vec(H_i)^H over fresh draws.

    Since every draw is linear in its path gains with angles fixed, the sum
    is accumulated in the n_paths-dimensional gain space and expanded once,
    which is algebraically identical to averaging the outer products.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    a_rx, a_tx = _steering_matrices(cfg)
    scale = math.sqrt(cfg.n_rx * cfg.n_tx / cfg.n_paths)
    # column p of the lift matrix is vec(a_rx_p a_tx_p^H), column-major vec
    lift = scale * (a_rx[:, None, :] * a_tx.conj()[None, :, :]).reshape(
        cfg.n_rx * cfg.n_tx, cfg.n_paths, order="F"
    )
    gains = np.stack([_draw_gains(cfg, rng) for _ in range(n_samples)], axis=1)
    gain_cov = gains @ gains.conj().T / n_samples
    corr = lift @ gain_cov @ lift.conj().T
    return (corr + corr.conj().T) / 2.0


def evolve_channel(cfg: ChannelModelConfig, scenario: MobilityScenario,
                   frame: int, seed: int) -> np.ndarray:
    """Channel for one mobility frame.

    Frames up to ``hold_frames`` (or any frame when the drift is zero)
    reproduce the base realization exactly.  Later frames shift the LOS
    angle of arrival by drift * (frame - hold_frames) and redraw the
    non-LOS path gains.
    """
    if not 1 <= frame <= scenario.n_frames:
        raise ValueError(f"frame must lie in [1, {scenario.n_frames}], got {frame}")
    base_rng = np.random.default_rng([seed, 0])
    if frame <= scenario.hold_frames or scenario.aoa_drift == 0.0:
        return gen_channel(cfg, base_rng)

    moved = frame - scenario.hold_frames
    aoa, aod = path_angles(cfg)
    aoa = aoa.copy()
    aoa[0] += scenario.aoa_drift * moved
    if not -math.pi / 2 < aoa[0] < math.pi / 2:
        raise ValueError(f"LOS AoA drifted out of (-pi/2, pi/2) at frame {frame}")
    moved_cfg = replace(cfg, aoa=tuple(aoa), aod=tuple(aod))

    # the LOS gain is fixed by construction, so redrawing through gen_channel
    # refreshes only the scattered paths
    frame_rng = np.random.default_rng([seed, frame])
    return gen_channel(moved_cfg, frame_rng)


def vec(m: np.ndarray) -> np.ndarray:
    """Column-major (mathematical) vectorization."""
    return m.reshape(-1, order="F")


def unvec(v: np.ndarray, rows: int, cols: int) -> np.ndarray:
    return v.reshape(rows, cols, order="F")


def save_matrix_csv(m: np.ndarray, path) -> None:
    """Dump a complex matrix as ``row,col,re,im`` rows (one file per matrix)."""
    m = np.asarray(m)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "re", "im"])
        for r in range(m.shape[0]):
            for c in range(m.shape[1]):
                z = complex(m[r, c])
                w.writerow([r, c, f"{z.real:.17g}", f"{z.imag:.17g}"])


def load_matrix_csv(path) -> np.ndarray:
    """Inverse of :func:`save_matrix_csv` (exact round-trip)."""
    rows, cols, entries = 0, 0, {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["row", "col", "re", "im"]:
            raise ValueError(f"unexpected header {header!r} in {path}")
        for rec in reader:
            r, c = int(rec[0]), int(rec[1])
            entries[(r, c)] = float(rec[2]) + 1j * float(rec[3])
            rows = max(rows, r + 1)
            cols = max(cols, c + 1)
    out = np.zeros((rows, cols), dtype=complex)
    for (r, c), z in entries.items():
        out[r, c] = z
    return out
