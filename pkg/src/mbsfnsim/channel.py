"""Radio channel: macroscopic gain, multipath fading, per-TTI snapshots.

Every user-cell pair carries a complex coefficient per resource-block
centre: the product of a static macroscopic amplitude (pathloss plus
log-normal shadowing, frozen per run) and a time-varying microscopic
fading term.  Fading is a tapped delay line whose taps are independent
Rayleigh processes with a Jakes Doppler spectrum, generated by a
sum-of-sinusoids so any time instant can be evaluated statelessly.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0

# ITU-T Vehicular A tapped delay line (delays in seconds, powers in dB).
VEHA_TAP_DELAYS = (0.0, 310e-9, 710e-9, 1090e-9, 1730e-9, 2510e-9)
VEHA_TAP_POWERS_DB = (0.0, -1.0, -9.0, -10.0, -15.0, -20.0)

# Urban-macro pathloss at 2 GHz: 128.1 + 37.6 log10(d/km) dB.
PATHLOSS_INTERCEPT_DB = 128.1
PATHLOSS_SLOPE_DB = 37.6
MIN_DISTANCE_M = 35.0

N_OSCILLATORS = 16
RB_BANDWIDTH_HZ = 180e3


class ChannelStateError(RuntimeError):
    """Internal-consistency failure (e.g. missing fading process)."""


def normalized_tap_powers(powers_db) -> np.ndarray:
    p = 10.0 ** (np.asarray(powers_db, dtype=float) / 10.0)
    return p / p.sum()


def doppler_frequency(speed_ms: float, carrier_hz: float) -> float:
    return speed_ms * carrier_hz / SPEED_OF_LIGHT


def pathloss_db(distance_m, min_distance_m: float = MIN_DISTANCE_M,
                intercept_db: float = PATHLOSS_INTERCEPT_DB,
                slope_db: float = PATHLOSS_SLOPE_DB):
    """Distance-dependent loss in dB; distances below the minimum are clamped."""
    d = np.maximum(np.asarray(distance_m, dtype=float), min_distance_m)
    return intercept_db + slope_db * np.log10(d / 1000.0)


@dataclass(frozen=True)
class MacroscopicGain:
    gamma: float                # linear amplitude gain
    pathloss_db: float
    shadowing_db: float


def macroscopic_gain(distance_m: float, shadowing_db: float,
                     min_distance_m: float = MIN_DISTANCE_M,
                     intercept_db: float = PATHLOSS_INTERCEPT_DB,
                     slope_db: float = PATHLOSS_SLOPE_DB) -> MacroscopicGain:
    """Pathloss plus shadowing as a linear amplitude factor."""
    if distance_m <= min_distance_m:
        log.warning("distance %.3f m clamped to minimum %.1f m",
                    distance_m, min_distance_m)
        distance_m = min_distance_m
    pl = intercept_db + slope_db * math.log10(distance_m / 1000.0)
    gain_db = -pl + shadowing_db
    return MacroscopicGain(gamma=10.0 ** (gain_db / 20.0),
                           pathloss_db=pl, shadowing_db=shadowing_db)


def draw_shadowing(n_users: int, n_cells: int, std_db: float,
                   seed) -> np.ndarray:
    """Independent log-normal shadowing per (user, cell), frozen per run."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5AD]))
    return rng.normal(0.0, std_db, size=(n_users, n_cells))


class FadingBank:
    """Sum-of-sinusoids Rayleigh fading for a batch of user-cell pairs.

    Each pair owns `n_taps` independent complex processes; real and imaginary
    parts are separate sums of N_OSCILLATORS cosines whose frequencies
    stratify the Jakes spectrum, so the ensemble autocorrelation is
    J0(2*pi*fd*tau) and E|g|^2 = 1 per tap.  Evaluation is stateless in t.
    """

    def __init__(self, doppler_hz: np.ndarray, tap_delays, tap_powers_db,
                 seed, stream: int = 0):
        self.n_pairs = len(doppler_hz)
        self.tap_delays = np.asarray(tap_delays, dtype=float)
        self.tap_powers = normalized_tap_powers(tap_powers_db)
        self.n_taps = len(self.tap_delays)
        rng = np.random.default_rng(
            np.random.SeedSequence([int(seed), 0xFAD, int(stream)]))
        shape = (self.n_pairs, self.n_taps, N_OSCILLATORS)
        m = np.arange(1, N_OSCILLATORS + 1, dtype=float)
        theta = rng.uniform(-math.pi, math.pi, size=shape[:2])
        alpha = (2.0 * math.pi * m - math.pi + theta[..., None]) \
            / (4.0 * N_OSCILLATORS)
        wd = 2.0 * math.pi * np.asarray(doppler_hz, dtype=float)
        self._w_re = wd[:, None, None] * np.cos(alpha)
        self._w_im = wd[:, None, None] * np.sin(alpha)
        self._phi = rng.uniform(-math.pi, math.pi, size=shape)
        self._psi = rng.uniform(-math.pi, math.pi, size=shape)

    def tap_gains(self, t) -> np.ndarray:
        """Per-tap complex gains at time(s) t: shape (len(t), n_pairs, n_taps)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        t4 = t[:, None, None, None]
        scale = 1.0 / math.sqrt(N_OSCILLATORS)
        re = np.cos(self._w_re[None] * t4 + self._phi[None]).sum(axis=3)
        im = np.cos(self._w_im[None] * t4 + self._psi[None]).sum(axis=3)
        return scale * (re + 1j * im)

    def block_tap_gains(self, t0: float, n: int, dt: float) -> np.ndarray:
        """tap_gains at t0 + i*dt for i in 0..n-1, via phasor rotation.

        One trig evaluation anchors the block; successive samples multiply by
        precomputed per-oscillator rotation powers, which is much cheaper than
        per-sample trig and drifts only at float rounding level within a block.
        """
        key = (n, dt)
        if getattr(self, "_pow_key", None) != key:
            steps = np.arange(n, dtype=float)[:, None, None, None]
            self._pow_re = np.exp(1j * (self._w_re[None] * dt) * steps)
            self._pow_im = np.exp(1j * (self._w_im[None] * dt) * steps)
            self._pow_key = key
        z_re0 = np.exp(1j * (self._w_re * t0 + self._phi))
        z_im0 = np.exp(1j * (self._w_im * t0 + self._psi))
        scale = 1.0 / math.sqrt(N_OSCILLATORS)
        re = np.einsum("ipkm,pkm->ipk", self._pow_re, z_re0).real
        im = np.einsum("ipkm,pkm->ipk", self._pow_im, z_im0).real
        return scale * (re + 1j * im)

    def steering(self, freq_offsets_hz) -> np.ndarray:
        """Tap-to-frequency mixing matrix (n_taps, n_freqs), powers included."""
        f = np.asarray(freq_offsets_hz, dtype=float)
        return (np.sqrt(self.tap_powers)[:, None]
                * np.exp(-2j * math.pi * f[None, :] * self.tap_delays[:, None]))

    def coefficients(self, t, freq_offsets_hz) -> np.ndarray:
        """Fading per pair and frequency: (len(t), n_pairs, n_freqs)."""
        return self.tap_gains(t) @ self.steering(freq_offsets_hz)


class FadingProcess:
    """Single-pair view of the tapped-delay-line fading model."""

    def __init__(self, doppler_hz: float, tap_delays=VEHA_TAP_DELAYS,
                 tap_powers_db=VEHA_TAP_POWERS_DB, seed=0, stream: int = 0):
        self.doppler_hz = float(doppler_hz)
        self._bank = FadingBank(np.array([doppler_hz]), tap_delays,
                                tap_powers_db, seed, stream)

    @property
    def tap_delays(self) -> np.ndarray:
        return self._bank.tap_delays

    @property
    def tap_powers(self) -> np.ndarray:
        return self._bank.tap_powers

    def tap_gains(self, t) -> np.ndarray:
        """Complex per-tap gains at time t, shape (n_taps,)."""
        return self._bank.tap_gains(float(t))[0, 0]

    def coefficient(self, t: float, subcarrier_freq_offset_hz: float = 0.0) -> complex:
        """Channel coefficient at time t and baseband frequency offset."""
        out = self._bank.coefficients(float(t),
                                      np.array([subcarrier_freq_offset_hz]))
        return complex(out[0, 0, 0])


def fading_coefficient(proc: FadingProcess, t: float,
                       subcarrier_freq_offset_hz: float = 0.0) -> complex:
    return proc.coefficient(t, subcarrier_freq_offset_hz)


@dataclass(frozen=True)
class ChannelSnapshot:
    """Complex coefficients h[user, cell, rb] for one TTI."""
    h: np.ndarray
    tti: int
    noise_variance: float

    def power(self) -> np.ndarray:
        return np.abs(self.h) ** 2


class ChannelModel:
    """Produces per-TTI snapshots for a set of users against all cells.

    Shadowing is frozen per (user, cell) for the whole run; the macroscopic
    amplitude is recomputed from current positions each snapshot so moving
    users see the correct distance-dependent gain.  Fading evolves with the
    TTI clock (1 ms).  Blocks of consecutive TTIs are precomputed to keep
    numpy overheads off the per-TTI path.
    """

    def __init__(self, cell_positions: np.ndarray, user_speeds_ms: np.ndarray,
                 shadowing_db: np.ndarray, carrier_hz: float, n_rb: int,
                 noise_variance: float, seed,
                 tap_delays=VEHA_TAP_DELAYS, tap_powers_db=VEHA_TAP_POWERS_DB,
                 tti_s: float = 1e-3, block_len: int = 64,
                 min_distance_m: float = MIN_DISTANCE_M):
        self.cell_positions = np.asarray(cell_positions, dtype=float)
        self.n_cells = len(self.cell_positions)
        self.n_users = len(user_speeds_ms)
        if shadowing_db.shape != (self.n_users, self.n_cells):
            raise ChannelStateError("shadowing map does not match users x cells")
        self.shadowing_db = shadowing_db
        self.noise_variance = float(noise_variance)
        self.tti_s = tti_s
        self.block_len = block_len
        self.min_distance_m = min_distance_m
        self.n_rb = n_rb
        self.rb_freqs = (np.arange(n_rb) - (n_rb - 1) / 2.0) * RB_BANDWIDTH_HZ
        doppler = np.repeat(
            [doppler_frequency(s, carrier_hz) for s in user_speeds_ms],
            self.n_cells)
        self.bank = FadingBank(doppler, tap_delays, tap_powers_db, seed)
        self._steer = self.bank.steering(self.rb_freqs)
        self._block_start = None
        self._block = None
        self._clamp_warned = False

    def amplitude_gain(self, positions: np.ndarray) -> np.ndarray:
        """Linear macroscopic amplitude per (user, cell) at given positions."""
        d = np.linalg.norm(positions[:, None, :]
                           - self.cell_positions[None, :, :], axis=2)
        clamped = d < self.min_distance_m
        if np.any(clamped) and not self._clamp_warned:
            log.warning("%d user-cell distance(s) below %.1f m clamped",
                        int(clamped.sum()), self.min_distance_m)
            self._clamp_warned = True
        gain_db = -pathloss_db(d, self.min_distance_m) + self.shadowing_db
        return 10.0 ** (gain_db / 20.0)

    def _fading_at(self, tti: int) -> np.ndarray:
        if self._block_start is None or not \
                (self._block_start <= tti < self._block_start + self.block_len):
            start = (tti // self.block_len) * self.block_len
            gains = self.bank.block_tap_gains(start * self.tti_s,
                                              self.block_len, self.tti_s)
            self._block = gains @ self._steer
            self._block_start = start
        return self._block[tti - self._block_start]

    def snapshot(self, tti: int, positions: np.ndarray) -> ChannelSnapshot:
        if len(positions) != self.n_users:
            raise ChannelStateError("positions do not match the user set")
        gamma = self.amplitude_gain(positions)
        fading = self._fading_at(tti).reshape(self.n_users, self.n_cells,
                                              self.n_rb)
        return ChannelSnapshot(h=gamma[:, :, None] * fading, tti=tti,
                               noise_variance=self.noise_variance)


def noise_variance_normalized(bandwidth_rb: int, tx_power_dbm: float,
                              noise_figure_db: float = 9.0,
                              noise_density_dbm_hz: float = -174.0) -> float:
    """Receiver noise power per RB divided by per-RB transmit power.

    Snapshots carry channel amplitudes only, so SINRs computed from them
    assume unit transmit power; this factor restores the absolute scale.
    """
    noise_dbm = noise_density_dbm_hz + noise_figure_db \
        + 10.0 * math.log10(RB_BANDWIDTH_HZ)
    tx_per_rb_dbm = tx_power_dbm - 10.0 * math.log10(bandwidth_rb)
    return 10.0 ** ((noise_dbm - tx_per_rb_dbm) / 10.0)
