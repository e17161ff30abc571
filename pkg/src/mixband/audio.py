"""Mono PCM audio: WAV parse/write, test-signal synthesis, 2x half-band resampling."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    InvalidConfig,
    InvalidFrequency,
    MalformedFile,
    UnsupportedChannels,
    UnsupportedFormat,
    UnsupportedRatio,
)

log = logging.getLogger(__name__)

# -32768 maps to exactly -1.0
PCM_SCALE = 32768.0
TONE_PEAK = 0.8

WIDE = "wide"
NARROW = "narrow"
WIDE_RATE = 16000
NARROW_RATE = 8000
CHANNEL_RATES = {WIDE: WIDE_RATE, NARROW: NARROW_RATE}

RESAMPLE_TAPS = 65


@dataclass
class AudioBuffer:
    """Mono signal with amplitudes in [-1, 1] and its sample rate."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate_hz <= 0:
            raise InvalidConfig(f"sample rate must be positive, got {self.sample_rate_hz}")

    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


def channel_for_rate(rate_hz: int) -> str:
    """Map 16000 -> wide, 8000 -> narrow."""
    for tag, rate in CHANNEL_RATES.items():
        if rate == rate_hz:
            return tag
    raise InvalidConfig(f"no channel tag for sample rate {rate_hz}")


def rate_for_channel(channel: str) -> int:
    try:
        return CHANNEL_RATES[channel]
    except KeyError:
        raise InvalidConfig(f"unknown channel tag {channel!r}") from None


def _u16(data: bytes, pos: int) -> int:
    return struct.unpack_from("<H", data, pos)[0]


def _u32(data: bytes, pos: int) -> int:
    return struct.unpack_from("<I", data, pos)[0]


def parse_wav(data: bytes) -> AudioBuffer:
    """Decode a RIFF/WAVE byte string holding 16-bit PCM mono audio.

    Chunks other than fmt/data are skipped. Samples are normalized by
    1/32768 so the most negative PCM value decodes to exactly -1.0.
    """
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedFile("not a RIFF/WAVE container")

    fmt = None
    pcm = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        size = _u32(data, pos + 4)
        body_start = pos + 8
        if body_start + size > len(data):
            raise MalformedFile(f"truncated chunk {chunk_id!r}")
        if chunk_id == b"fmt ":
            if size < 16:
                raise MalformedFile("fmt chunk shorter than 16 bytes")
            fmt = data[body_start : body_start + size]
        elif chunk_id == b"data":
            pcm = data[body_start : body_start + size]
        # chunks are word aligned; a final odd chunk may omit its pad byte
        pos = min(body_start + size + (size & 1), len(data))
    if pos != len(data):
        raise MalformedFile("trailing bytes do not form a chunk")

    if fmt is None:
        raise MalformedFile("missing fmt chunk")
    if pcm is None:
        raise MalformedFile("missing data chunk")

    audio_format = _u16(fmt, 0)
    n_channels = _u16(fmt, 2)
    sample_rate = _u32(fmt, 4)
    bits = _u16(fmt, 14)
    if audio_format != 1:
        raise UnsupportedFormat(f"audio format {audio_format}, only PCM (1) supported")
    if n_channels != 1:
        raise UnsupportedChannels(f"{n_channels} channels, only mono supported")
    if bits != 16:
        raise UnsupportedFormat(f"{bits}-bit samples, only 16-bit supported")
    if sample_rate == 0:
        raise MalformedFile("zero sample rate")
    if len(pcm) % 2 != 0:
        raise MalformedFile("data chunk holds a partial sample")

    raw = np.frombuffer(pcm, dtype="<i2")
    return AudioBuffer(raw.astype(np.float64) / PCM_SCALE, sample_rate)


def pcm16_encode(samples: np.ndarray) -> tuple[np.ndarray, int]:
    """Quantize amplitudes to int16, saturating out-of-range values.

    Returns the int16 array and the count of samples that had to be clipped.
    """
    q = np.rint(np.asarray(samples, dtype=np.float64) * PCM_SCALE)
    clipped = int(np.count_nonzero((q > 32767.0) | (q < -32768.0)))
    return np.clip(q, -32768.0, 32767.0).astype("<i2"), clipped


def write_wav(buf: AudioBuffer) -> bytes:
    """Encode an AudioBuffer as a canonical 44-byte-header PCM16 mono WAV."""
    pcm, clipped = pcm16_encode(buf.samples)
    if clipped:
        log.warning("write_wav clipped %d out-of-range samples", clipped)
    data = pcm.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(data),
        b"WAVE",
        b"fmt ",
        16,
        1,  # PCM
        1,  # mono
        buf.sample_rate_hz,
        buf.sample_rate_hz * 2,
        2,
        16,
        b"data",
        len(data),
    )
    return header + data


def load_wav(path) -> AudioBuffer:
    with open(path, "rb") as fh:
        return parse_wav(fh.read())


def save_wav(path, buf: AudioBuffer) -> None:
    with open(path, "wb") as fh:
        fh.write(write_wav(buf))


def _halfband_taps() -> np.ndarray:
    # Cutoff at a quarter of the wide rate; every even-offset tap is zero by
    # construction, so original samples pass through a 2x interpolator intact.
    n = np.arange(RESAMPLE_TAPS)
    mid = (RESAMPLE_TAPS - 1) // 2
    taps = 0.5 * np.sinc(0.5 * (n - mid)) * np.hanning(RESAMPLE_TAPS)
    taps[(n - mid) % 2 == 0] = 0.0
    taps[mid] = 0.5
    return taps


_TAPS = _halfband_taps()


def resample(buf: AudioBuffer, target_rate_hz: int) -> AudioBuffer:
    """Resample by exactly 2:1 or 1:2 with a 65-tap Hann windowed-sinc half-band filter.

    Output length is round(input_length * target/source). The filter has an
    integer group delay, compensated so output samples align with input time.
    """
    src = buf.sample_rate_hz
    if target_rate_hz <= 0:
        raise InvalidConfig(f"target rate must be positive, got {target_rate_hz}")
    x = buf.samples
    n_out = int(np.floor(len(x) * target_rate_hz / src + 0.5))
    if src == 2 * target_rate_hz:
        filtered = np.convolve(x, _TAPS, mode="same")
        return AudioBuffer(filtered[::2][:n_out], target_rate_hz)
    if 2 * src == target_rate_hz:
        stuffed = np.zeros(2 * len(x))
        stuffed[::2] = x
        return AudioBuffer(np.convolve(stuffed, 2.0 * _TAPS, mode="same")[:n_out], target_rate_hz)
    raise UnsupportedRatio(f"unsupported ratio {src} -> {target_rate_hz}, only 2:1 and 1:2")


def synthesize(
    kind: str,
    freq_hz: float = 1000.0,
    duration_s: float = 1.0,
    rate_hz: int = WIDE_RATE,
    seed: int = 0,
) -> AudioBuffer:
    """Generate a deterministic test signal: sine, linear chirp, or white noise.

    Tones peak at 0.8; the chirp sweeps from 0 Hz up to freq_hz over the
    duration; white noise is uniform in [-0.8, 0.8] from the given seed.
    """
    if duration_s <= 0:
        raise InvalidConfig(f"duration must be positive, got {duration_s}")
    if rate_hz <= 0:
        raise InvalidConfig(f"rate must be positive, got {rate_hz}")
    n = int(round(duration_s * rate_hz))
    t = np.arange(n) / rate_hz
    if kind == "sine":
        if not 0 < freq_hz < rate_hz / 2:
            raise InvalidFrequency(f"{freq_hz} Hz outside (0, {rate_hz / 2})")
        return AudioBuffer(TONE_PEAK * np.sin(2 * np.pi * freq_hz * t), rate_hz)
    if kind == "chirp":
        if not 0 < freq_hz < rate_hz / 2:
            raise InvalidFrequency(f"{freq_hz} Hz outside (0, {rate_hz / 2})")
        # instantaneous frequency ramps linearly from 0 to freq_hz
        phase = 2 * np.pi * (freq_hz / (2 * duration_s)) * t * t
        return AudioBuffer(TONE_PEAK * np.sin(phase), rate_hz)
    if kind == "white_noise":
        rng = np.random.default_rng(seed)
        return AudioBuffer(rng.uniform(-TONE_PEAK, TONE_PEAK, n), rate_hz)
    raise InvalidConfig(f"unknown signal kind {kind!r}")
