"""Baseband waveform synthesis: OFDM traffic, five jammer families, mixing.

All generators return a :class:`SampleBuffer` of complex128 samples. Real-valued
models (the single tone) live in the real part so every buffer shares one type.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import AlignmentError, ConfigurationError, FormatError

DEFAULT_SAMPLE_RATE_HZ = 1e6
DEFAULT_SLOT_S = 1e-3

JSIQ_MAGIC = b"JSIQ"
JSIQ_VERSION = 1
_JSIQ_HEADER = struct.Struct("<4sHHd")


@dataclass
class SampleBuffer:
    samples: np.ndarray
    sample_rate_hz: float
    t0_s: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        if self.samples.ndim != 1:
            raise ConfigurationError("samples must be one-dimensional")
        if not self.sample_rate_hz > 0:
            raise ConfigurationError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    @property
    def t(self) -> np.ndarray:
        return self.t0_s + np.arange(len(self.samples)) / self.sample_rate_hz

    def power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2)) if len(self) else 0.0

    def energy(self) -> float:
        return float(np.sum(np.abs(self.samples) ** 2))


def n_samples_for(duration_s: float, sample_rate_hz: float) -> int:
    if not duration_s > 0:
        raise ConfigurationError(f"duration_s must be positive, got {duration_s}")
    if not sample_rate_hz > 0:
        raise ConfigurationError(f"sample_rate_hz must be positive, got {sample_rate_hz}")
    return max(1, int(round(duration_s * sample_rate_hz)))


def _time_axis(duration_s, sample_rate_hz):
    return np.arange(n_samples_for(duration_s, sample_rate_hz)) / sample_rate_hz


# ---------------------------------------------------------------------------
# parameter sets

@dataclass(frozen=True)
class SingleToneParams:
    power_j: float = 1.0
    freq_hz: float = 0.0
    phase_rad: float = 0.0

    def __post_init__(self):
        if self.power_j < 0:
            raise ConfigurationError(f"tone power must be >= 0, got {self.power_j}")


@dataclass(frozen=True)
class MultiToneParams:
    """Tones as ``(power, freq_hz, phase_rad)`` triples."""

    tones: tuple = ()

    def __post_init__(self):
        tones = tuple(tuple(float(v) for v in tone) for tone in self.tones)
        for tone in tones:
            if len(tone) != 3:
                raise ConfigurationError(f"tone must be (power, freq, phase), got {tone}")
            if tone[0] < 0:
                raise ConfigurationError(f"tone power must be >= 0, got {tone[0]}")
        object.__setattr__(self, "tones", tones)

    @classmethod
    def random(cls, n_tones, band_hz, rng, power_range=(0.5, 1.5)):
        """Draw tones with frequencies inside ``band_hz`` and phases uniform on [0, 2pi)."""
        lo, hi = band_hz
        return cls(tuple(
            (rng.uniform(*power_range), rng.uniform(lo, hi), rng.uniform(0.0, 2 * np.pi))
            for _ in range(n_tones)
        ))


@dataclass(frozen=True)
class ChirpParams:
    amplitude: float = 1.0
    f0_hz: float = 0.0
    slope_hz_per_s: float = 0.0
    phase_rad: float = 0.0
    duration_s: float = DEFAULT_SLOT_S

    def __post_init__(self):
        if self.amplitude < 0:
            raise ConfigurationError(f"chirp amplitude must be >= 0, got {self.amplitude}")
        if not self.duration_s > 0:
            raise ConfigurationError(f"chirp duration must be positive, got {self.duration_s}")


class EnvelopeMode(str, Enum):
    CONSTANT = "constant"
    GAUSSIAN_NOISE = "gaussian_noise"


@dataclass(frozen=True)
class SawtoothSweepParams:
    amplitude_uj: float = 1.0
    carrier_hz: float = 0.0
    sweep_slope_hz_per_s: float = 0.0
    sweep_period_s: float = DEFAULT_SLOT_S
    envelope_mode: EnvelopeMode = EnvelopeMode.CONSTANT
    init_phase_rad: float = 0.0

    def __post_init__(self):
        if self.amplitude_uj < 0:
            raise ConfigurationError(f"sweep amplitude must be >= 0, got {self.amplitude_uj}")
        if not self.sweep_period_s > 0:
            raise ConfigurationError(f"sweep period must be positive, got {self.sweep_period_s}")
        object.__setattr__(self, "envelope_mode", EnvelopeMode(self.envelope_mode))


@dataclass(frozen=True)
class BroadbandParams:
    jam_center_hz: float
    jam_bandwidth_hz: float
    channel_bandwidth_hz: float
    comm_center_hz: float = 0.0

    def __post_init__(self):
        if not (self.jam_bandwidth_hz > 0 and self.channel_bandwidth_hz > 0):
            raise ConfigurationError("bandwidths must be positive")


@dataclass(frozen=True)
class OfdmConfig:
    n_subcarriers: int = 64
    cp_len: int = 16
    subcarrier_mod: str = "qpsk"
    n_symbols: int = 16
    occupied_fraction: float = 52 / 64

    def __post_init__(self):
        n = self.n_subcarriers
        if n < 1 or n & (n - 1):
            raise ConfigurationError(f"n_subcarriers must be a power of two, got {n}")
        if not 0 <= self.cp_len < n:
            raise ConfigurationError(f"cp_len must satisfy 0 <= cp_len < {n}, got {self.cp_len}")
        if self.subcarrier_mod != "qpsk":
            raise ConfigurationError(f"unsupported subcarrier modulation {self.subcarrier_mod!r}")
        if self.n_symbols < 1:
            raise ConfigurationError("n_symbols must be positive")
        if not 0 < self.occupied_fraction <= 1:
            raise ConfigurationError("occupied_fraction must lie in (0, 1]")

    def occupied_bins(self) -> np.ndarray:
        """FFT bin indices carrying data, centred on DC."""
        k = max(1, int(round(self.occupied_fraction * self.n_subcarriers)))
        offsets = np.arange(k) - k // 2
        return np.mod(offsets, self.n_subcarriers)


@dataclass(frozen=True)
class SlotMask:
    active: tuple
    slot_duration_s: float

    def __post_init__(self):
        object.__setattr__(self, "active", tuple(bool(a) for a in self.active))
        if not self.slot_duration_s > 0:
            raise ConfigurationError("slot_duration_s must be positive")
        if not self.active:
            raise ConfigurationError("a slot mask needs at least one slot")

    @classmethod
    def full(cls, duration_s, slot_duration_s=DEFAULT_SLOT_S, active=True):
        n = max(1, int(np.ceil(duration_s / slot_duration_s - 1e-9)))
        return cls((active,) * n, slot_duration_s)

    @property
    def duration_s(self):
        return len(self.active) * self.slot_duration_s

    def gate(self, n_samples, sample_rate_hz) -> np.ndarray:
        """Per-sample boolean gate for a buffer of ``n_samples`` samples."""
        if self.duration_s * sample_rate_hz < n_samples - 1e-6:
            raise AlignmentError(
                f"mask covers {self.duration_s:g} s but buffer lasts {n_samples / sample_rate_hz:g} s")
        # integer sample arithmetic keeps slot edges exact when they fall on samples
        slot_len = self.slot_duration_s * sample_rate_hz
        idx = np.floor(np.arange(n_samples) / slot_len + 1e-9).astype(np.int64)
        idx = np.minimum(idx, len(self.active) - 1)
        return np.asarray(self.active, dtype=bool)[idx]


# ---------------------------------------------------------------------------
# generators

def gen_ofdm(cfg: OfdmConfig, sample_rate_hz=DEFAULT_SAMPLE_RATE_HZ, duration_s=None, seed=0):
    """QPSK-OFDM with cyclic prefix, normalised to unit mean power.

    With ``duration_s=None`` exactly ``cfg.n_symbols`` symbols are produced;
    otherwise as many symbols as needed are generated and truncated.
    """
    sym_len = cfg.n_subcarriers + cfg.cp_len
    if duration_s is None:
        n = cfg.n_symbols * sym_len
    else:
        n = n_samples_for(duration_s, sample_rate_hz)
    n_sym = -(-n // sym_len)
    rng = np.random.default_rng(seed)
    bins = cfg.occupied_bins()
    idx = rng.integers(0, 4, size=(n_sym, bins.size))
    grid = np.zeros((n_sym, cfg.n_subcarriers), dtype=np.complex128)
    grid[:, bins] = np.exp(1j * (np.pi / 4 + np.pi / 2 * idx))
    body = np.fft.ifft(grid, axis=1)
    if cfg.cp_len:
        body = np.hstack([body[:, -cfg.cp_len:], body])
    x = body.reshape(-1)[:n]
    x = x / np.sqrt(np.mean(np.abs(x) ** 2))
    return SampleBuffer(x, sample_rate_hz)


def gen_single_tone(p: SingleToneParams, sample_rate_hz=DEFAULT_SAMPLE_RATE_HZ, duration_s=DEFAULT_SLOT_S):
    t = _time_axis(duration_s, sample_rate_hz)
    x = np.sqrt(2.0 * p.power_j) * np.cos(2 * np.pi * p.freq_hz * t + p.phase_rad)
    return SampleBuffer(x.astype(np.complex128), sample_rate_hz)


def gen_multi_tone(p: MultiToneParams, sample_rate_hz=DEFAULT_SAMPLE_RATE_HZ, duration_s=DEFAULT_SLOT_S):
    t = _time_axis(duration_s, sample_rate_hz)
    x = np.zeros(t.size, dtype=np.complex128)
    for power, freq, phase in p.tones:
        x += np.sqrt(power) * np.exp(1j * (2 * np.pi * freq * t + phase))
    return SampleBuffer(x, sample_rate_hz)


def gen_linear_sweep(p: ChirpParams, sample_rate_hz=DEFAULT_SAMPLE_RATE_HZ):
    t = _time_axis(p.duration_s, sample_rate_hz)
    phase = 2 * np.pi * p.f0_hz * t + np.pi * p.slope_hz_per_s * t ** 2 + p.phase_rad
    return SampleBuffer(p.amplitude * np.exp(1j * phase), sample_rate_hz)


def sawtooth_phase(t, carrier_hz, slope_hz_per_s, period_s):
    """Phase of a carrier whose frequency ramps by ``slope`` and resets every period.

    Instantaneous frequency is ``carrier + slope * (t mod period)``. Phase stays
    continuous across resets.
    """
    n = np.floor(t / period_s)
    tau = t - n * period_s
    per_period = np.pi * slope_hz_per_s * period_s ** 2
    return 2 * np.pi * carrier_hz * t + np.pi * slope_hz_per_s * tau ** 2 + n * per_period


def gen_sawtooth_sweep(p: SawtoothSweepParams, sample_rate_hz=DEFAULT_SAMPLE_RATE_HZ,
                       duration_s=DEFAULT_SLOT_S, seed=0):
    t = _time_axis(duration_s, sample_rate_hz)
    phase = sawtooth_phase(t, p.carrier_hz, p.sweep_slope_hz_per_s, p.sweep_period_s)
    if p.envelope_mode is EnvelopeMode.CONSTANT:
        env = np.ones(t.size)
    else:
        env = np.random.default_rng(seed).standard_normal(t.size)
    x = p.amplitude_uj * env * np.exp(1j * (phase + p.init_phase_rad))
    return SampleBuffer(x, sample_rate_hz)


def is_broadband_blocking(p: BroadbandParams) -> bool:
    half = p.jam_bandwidth_hz / 2
    wide_enough = p.jam_bandwidth_hz > 5 * p.channel_bandwidth_hz
    covers = p.jam_center_hz - half <= p.comm_center_hz <= p.jam_center_hz + half
    return bool(wide_enough and covers)


def gen_broadband_noise(p: BroadbandParams, sample_rate_hz=DEFAULT_SAMPLE_RATE_HZ,
                        duration_s=DEFAULT_SLOT_S, seed=0):
    """Unit-power complex Gaussian noise confined to the jammer band.

    The band is expressed relative to ``comm_center_hz`` (baseband DC) and
    clipped to the Nyquist interval.
    """
    n = n_samples_for(duration_s, sample_rate_hz)
    rng = np.random.default_rng(seed)
    spec = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    f = np.fft.fftfreq(n, d=1.0 / sample_rate_hz)
    offset = p.jam_center_hz - p.comm_center_hz
    inside = np.abs(f - offset) <= p.jam_bandwidth_hz / 2
    if not inside.any():
        raise ConfigurationError("jammer band does not intersect the sampled bandwidth")
    x = np.fft.ifft(np.where(inside, spec, 0))
    x /= np.sqrt(np.mean(np.abs(x) ** 2))
    return SampleBuffer(x, sample_rate_hz)


# ---------------------------------------------------------------------------
# mixing

@dataclass
class MixComponents:
    """Scaled constituents of a mixed buffer; ``total`` is their sum."""

    signal: SampleBuffer
    jammer: np.ndarray
    noise: np.ndarray
    gate: np.ndarray = field(repr=False)

    @property
    def total(self) -> SampleBuffer:
        s = self.signal
        return SampleBuffer(s.samples + self.jammer + self.noise, s.sample_rate_hz, s.t0_s)


def db_to_lin(db):
    return 10.0 ** (db / 10.0)


def lin_to_db(x):
    return 10.0 * np.log10(x)


def mix_components(signal: SampleBuffer, jammer, jsr_db, snr_db, mask: SlotMask | None = None,
                   seed=0) -> MixComponents:
    n = len(signal)
    fs = signal.sample_rate_hz
    if mask is None:
        gate = np.ones(n, dtype=bool)
    else:
        gate = mask.gate(n, fs)

    jam = np.zeros(n, dtype=np.complex128)
    if jammer is not None:
        if jammer.sample_rate_hz != fs:
            raise AlignmentError(
                f"sample-rate mismatch: signal {fs:g} Hz, jammer {jammer.sample_rate_hz:g} Hz")
        if len(jammer) < n:
            raise AlignmentError(f"jammer has {len(jammer)} samples, signal needs {n}")
        j = np.where(gate, jammer.samples[:n], 0)
        if gate.any():
            p_sig = np.mean(np.abs(signal.samples[gate]) ** 2)
            p_jam = np.mean(np.abs(j[gate]) ** 2)
            if p_jam > 0:
                jam = j * np.sqrt(db_to_lin(jsr_db) * p_sig / p_jam)

    noise = np.zeros(n, dtype=np.complex128)
    if snr_db is not None and np.isfinite(snr_db):
        rng = np.random.default_rng(seed)
        w = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        target = signal.power() / db_to_lin(snr_db)
        # rescale the realisation so the requested SNR holds exactly
        noise = w * np.sqrt(target / np.mean(np.abs(w) ** 2))
    return MixComponents(signal, jam, noise, gate)


def mix(signal: SampleBuffer, jammer, jsr_db, snr_db, mask: SlotMask | None = None, seed=0):
    """Return ``signal + g * jammer * mask + awgn``.

    ``g`` makes the jammer-to-signal power ratio over the mask-active samples
    equal ``jsr_db``; the noise power is set from the whole-buffer signal power.
    Pass ``snr_db=None`` for a noiseless mix.
    """
    return mix_components(signal, jammer, jsr_db, snr_db, mask, seed).total


# ---------------------------------------------------------------------------
# serialisation

def save_iq(buf: SampleBuffer, path):
    iq = np.empty(2 * len(buf), dtype="<f4")
    iq[0::2] = buf.samples.real
    iq[1::2] = buf.samples.imag
    with open(path, "wb") as fh:
        fh.write(_JSIQ_HEADER.pack(JSIQ_MAGIC, JSIQ_VERSION, 0, float(buf.sample_rate_hz)))
        fh.write(iq.tobytes())


def read_iq_header(path):
    with open(path, "rb") as fh:
        head = fh.read(_JSIQ_HEADER.size)
    if len(head) < _JSIQ_HEADER.size:
        raise FormatError(f"{path}: truncated JSIQ header")
    magic, version, _, fs = _JSIQ_HEADER.unpack(head)
    if magic != JSIQ_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != JSIQ_VERSION:
        raise FormatError(f"{path}: unsupported JSIQ version {version}")
    n = (Path(path).stat().st_size - _JSIQ_HEADER.size) // 8
    return {"magic": "JSIQ", "version": version, "sample_rate_hz": fs, "n_samples": int(n)}


def load_iq(path) -> SampleBuffer:
    hdr = read_iq_header(path)
    raw = np.fromfile(path, dtype="<f4", offset=_JSIQ_HEADER.size)
    if raw.size % 2:
        raise FormatError(f"{path}: odd number of I/Q floats")
    return SampleBuffer(raw[0::2].astype(np.float64) + 1j * raw[1::2], hdr["sample_rate_hz"])


def power_spectrum(buf: SampleBuffer):
    """Centred frequency axis and per-bin power ``|X_k|^2 / N^2`` (sums to mean power)."""
    n = len(buf)
    X = np.fft.fftshift(np.fft.fft(buf.samples))
    f = np.fft.fftshift(np.fft.fftfreq(n, d=1.0 / buf.sample_rate_hz))
    return f, np.abs(X) ** 2 / n ** 2
