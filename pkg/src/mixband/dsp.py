"""Frame-level spectral analysis: log-mel features, band energy, spectrogram export."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import AudioBuffer
from .errors import InvalidConfig, TooShort

LOG_FLOOR = 1e-10
DB_FLOOR = 10.0 * np.log10(LOG_FLOOR)  # -100 dB


@dataclass
class MelFilterbankConfig:
    n_mels: int = 40
    fft_size: int = 512
    f_min_hz: float = 20.0
    f_max_hz: float = 7600.0
    window_ms: float = 25.0
    hop_ms: float = 10.0

    def validate(self, rate_hz: int) -> None:
        if self.n_mels < 2:
            raise InvalidConfig(f"n_mels must be >= 2, got {self.n_mels}")
        _check_fft_size(self.fft_size)
        if not 0 <= self.f_min_hz < self.f_max_hz:
            raise InvalidConfig(f"need 0 <= f_min < f_max, got {self.f_min_hz}, {self.f_max_hz}")
        if self.f_max_hz > rate_hz / 2:
            raise InvalidConfig(f"f_max {self.f_max_hz} above Nyquist {rate_hz / 2}")
        if self.window_ms <= 0 or self.hop_ms <= 0:
            raise InvalidConfig("window and hop must be positive")


@dataclass
class FeatureMatrix:
    """T x D per-frame feature rows plus the framing that produced them."""

    rows: np.ndarray
    frame_hop_ms: float
    frame_window_ms: float
    source_utt_id: str = ""

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2:
            raise InvalidConfig(f"feature rows must be 2-D, got shape {self.rows.shape}")

    @property
    def num_frames(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


@dataclass
class BandEnergyReport:
    cutoff_hz: float
    low_band_energy: float
    high_band_energy: float
    high_fraction: float = field(init=False)

    def __post_init__(self):
        total = self.low_band_energy + self.high_band_energy
        self.high_fraction = self.high_band_energy / total if total > 0 else 0.0


def _check_fft_size(fft_size: int) -> None:
    if fft_size < 2 or fft_size & (fft_size - 1):
        raise InvalidConfig(f"fft_size must be a power of two, got {fft_size}")


def _window_samples(window_ms: float, rate_hz: int) -> int:
    return int(round(window_ms * rate_hz / 1000.0))


def frame_count(n_samples: int, window_ms: float, hop_ms: float, rate_hz: int) -> int:
    """Number of full analysis frames: floor((N - W) / H) + 1."""
    w = _window_samples(window_ms, rate_hz)
    h = _window_samples(hop_ms, rate_hz)
    if w <= 0 or h <= 0:
        raise InvalidConfig("window and hop must be positive")
    if n_samples < w:
        raise TooShort(f"{n_samples} samples, need at least {w}")
    return (n_samples - w) // h + 1


def _frame_matrix(samples: np.ndarray, w: int, h: int) -> np.ndarray:
    n_frames = (len(samples) - w) // h + 1
    idx = np.arange(w)[None, :] + h * np.arange(n_frames)[:, None]
    return samples[idx]


def power_spectrum(frame: np.ndarray, fft_size: int, apply_window: bool = True) -> np.ndarray:
    """|FFT|^2 of one Hann-windowed frame, zero-padded to fft_size.

    Returns fft_size/2 + 1 bins. Set apply_window=False for a rectangular
    window (diagnostics only).
    """
    _check_fft_size(fft_size)
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 1 or len(frame) > fft_size:
        raise InvalidConfig(f"frame must be 1-D with length <= {fft_size}")
    if apply_window:
        frame = frame * np.hanning(len(frame))
    spec = np.fft.rfft(frame, n=fft_size)
    return np.abs(spec) ** 2


def _power_frames(buf: AudioBuffer, cfg: MelFilterbankConfig) -> np.ndarray:
    """T x (fft/2+1) power spectra for every full frame of the buffer."""
    cfg.validate(buf.sample_rate_hz)
    w = _window_samples(cfg.window_ms, buf.sample_rate_hz)
    h = _window_samples(cfg.hop_ms, buf.sample_rate_hz)
    if w > cfg.fft_size:
        raise InvalidConfig(f"window of {w} samples exceeds fft_size {cfg.fft_size}")
    frame_count(len(buf.samples), cfg.window_ms, cfg.hop_ms, buf.sample_rate_hz)
    frames = _frame_matrix(buf.samples, w, h) * np.hanning(w)[None, :]
    return np.abs(np.fft.rfft(frames, n=cfg.fft_size, axis=1)) ** 2


def mel_scale(f_hz):
    return 2595.0 * np.log10(1.0 + np.asarray(f_hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: MelFilterbankConfig, rate_hz: int) -> np.ndarray:
    """Triangular mel filters, peak 1, as an (n_mels, fft/2+1) weight matrix."""
    edges_hz = mel_to_hz(np.linspace(mel_scale(cfg.f_min_hz), mel_scale(cfg.f_max_hz), cfg.n_mels + 2))
    bin_hz = np.arange(cfg.fft_size // 2 + 1) * rate_hz / cfg.fft_size
    weights = np.zeros((cfg.n_mels, len(bin_hz)))
    for m in range(cfg.n_mels):
        lo, center, hi = edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]
        up = (bin_hz - lo) / (center - lo)
        down = (hi - bin_hz) / (hi - center)
        weights[m] = np.maximum(0.0, np.minimum(up, down))
    return weights


def logmel(buf: AudioBuffer, cfg: MelFilterbankConfig | None = None) -> FeatureMatrix:
    """Log mel-filterbank energies, ln(mel_energy + 1e-10), one row per frame."""
    cfg = cfg or MelFilterbankConfig()
    power = _power_frames(buf, cfg)
    fbank = mel_filterbank(cfg, buf.sample_rate_hz)
    feats = np.log(power @ fbank.T + LOG_FLOOR)
    return FeatureMatrix(feats, cfg.hop_ms, cfg.window_ms)


def band_energy_ratio(
    buf: AudioBuffer, cutoff_hz: float, cfg: MelFilterbankConfig | None = None
) -> BandEnergyReport:
    """Split spectral energy at cutoff_hz using the frame-averaged power spectrum.

    Interior bins count twice (two-sided spectrum); the bin at the cutoff
    frequency is assigned to the low band.
    """
    cfg = cfg or MelFilterbankConfig()
    if cutoff_hz >= buf.sample_rate_hz / 2:
        raise InvalidConfig(f"cutoff {cutoff_hz} at or above Nyquist {buf.sample_rate_hz / 2}")
    if cutoff_hz < 0:
        raise InvalidConfig(f"cutoff must be non-negative, got {cutoff_hz}")
    avg = _power_frames(buf, cfg).mean(axis=0)
    weights = np.full(len(avg), 2.0)
    weights[0] = 1.0
    weights[-1] = 1.0
    bin_hz = np.arange(len(avg)) * buf.sample_rate_hz / cfg.fft_size
    low_sel = bin_hz <= cutoff_hz
    low = float(np.sum(avg[low_sel] * weights[low_sel]))
    high = float(np.sum(avg[~low_sel] * weights[~low_sel]))
    return BandEnergyReport(cutoff_hz, low, high)


def spectrogram_db(buf: AudioBuffer, cfg: MelFilterbankConfig | None = None) -> np.ndarray:
    """T x (fft/2+1) grid of dB values with a -100 dB floor."""
    cfg = cfg or MelFilterbankConfig()
    return 10.0 * np.log10(_power_frames(buf, cfg) + LOG_FLOOR)


def export_spectrogram(
    buf: AudioBuffer, cfg: MelFilterbankConfig | None = None, format: str = "csv"
) -> bytes:
    """Render the dB spectrogram grid as CSV text or an 8-bit binary PGM image."""
    grid = spectrogram_db(buf, cfg)
    if format == "csv":
        lines = [",".join(f"{v:.6f}" for v in row) for row in grid]
        return ("\n".join(lines) + "\n").encode("utf-8")
    if format == "pgm":
        lo, hi = float(grid.min()), float(grid.max())
        if hi > lo:
            scaled = np.rint((grid - lo) / (hi - lo) * 255.0)
        else:
            scaled = np.zeros_like(grid)
        header = f"P5\n{grid.shape[1]} {grid.shape[0]}\n255\n".encode("ascii")
        return header + scaled.astype(np.uint8).tobytes()
    raise InvalidConfig(f"unknown spectrogram format {format!r}")
