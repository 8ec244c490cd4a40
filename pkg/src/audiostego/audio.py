"""Waveform <-> log-mel feature coding.

Analysis is a Hann-windowed, reflect-centred STFT (n_fft 1024, hop 256) at
16 kHz. Compression projects magnitudes through 80 area-normalised
triangular mel filters and maps log amplitude onto [0, 1] with a fixed
-80 dB floor. Decompression lifts the mel back to linear frequency and runs
fast Griffin-Lim. Any other vocoder can be plugged in through
:func:`register_decompressor`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .errors import ConfigError, DecompressionError, InputError

SAMPLE_RATE = 16000
N_FFT = 1024
HOP = 256
N_MELS = 80
FMIN = 0.0
FMAX = 8000.0
FLOOR_DB = -80.0
GL_ITERS = 60
GL_MOMENTUM = 0.99
NNLS_ITERS = 50

# Mel amplitude treated as 0 dB when no corpus estimate is available. A
# full-scale sine peaks near 10 in these units, so this leaves headroom.
DEFAULT_REF = 16.0

# Samples below this magnitude are flushed to zero on ingestion (about
# -174 dBFS); keeps the raw packing map exactly invertible in float64.
_FLUSH = 2.0**-29


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float32).reshape(-1)
        if self.sample_rate != SAMPLE_RATE:
            raise InputError(f"sample_rate must be {SAMPLE_RATE}, got {self.sample_rate}")
        if x.size == 0:
            raise InputError("empty waveform")
        if not np.all(np.isfinite(x)):
            raise InputError("waveform contains non-finite samples")
        x = np.where(np.abs(x) < _FLUSH, np.float32(0), x)
        x = np.clip(x, -1.0, 1.0)
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    @classmethod
    def silence(cls, n_samples: int) -> "Waveform":
        return cls(np.zeros(n_samples, dtype=np.float32))


@dataclass(frozen=True)
class StftSpec:
    bins: np.ndarray  # complex [n_fft//2 + 1, T]
    hop: int = HOP
    window_len: int = N_FFT

    @property
    def n_frames(self) -> int:
        return self.bins.shape[1]


@dataclass(frozen=True)
class MelSpectrogram:
    values: np.ndarray  # [80, T] in [0, 1]
    source_len: int
    floor_db: float = FLOOR_DB
    ref: float = DEFAULT_REF

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or v.shape[0] != N_MELS:
            raise InputError(f"mel must be [{N_MELS}, T], got {v.shape}")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise InputError("mel values must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def n_frames(n_samples: int, hop: int = HOP) -> int:
    """Frame count of the centred STFT."""
    return 1 + n_samples // hop


def content_frames(n_samples: int, hop: int = HOP) -> int:
    """Frames that carry content; the trailing centre-pad frame is dropped."""
    return -(-n_samples // hop)


@lru_cache(maxsize=4)
def hann(n: int = N_FFT) -> np.ndarray:
    # periodic Hann: constant overlap-add at hop n/4
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft(wave: Waveform | np.ndarray, n_fft: int = N_FFT, hop: int = HOP) -> StftSpec:
    x = wave.samples if isinstance(wave, Waveform) else np.asarray(wave, dtype=np.float64)
    if x.size == 0:
        raise InputError("empty waveform")
    x = np.asarray(x, dtype=np.float64)
    pad = n_fft // 2
    xp = np.pad(x, pad, mode="reflect") if x.size > 1 else np.pad(x, pad)
    t = n_frames(x.size, hop)
    idx = np.arange(n_fft)[None, :] + hop * np.arange(t)[:, None]
    frames = xp[idx] * hann(n_fft)
    return StftSpec(np.fft.rfft(frames, axis=1).T, hop=hop, window_len=n_fft)


def istft(bins: np.ndarray, length: int, n_fft: int = N_FFT, hop: int = HOP) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`, trimmed to ``length``."""
    win = hann(n_fft)
    frames = np.fft.irfft(bins.T, n=n_fft, axis=1) * win
    t = frames.shape[0]
    total = n_fft + hop * (t - 1)
    idx = np.arange(n_fft)[None, :] + hop * np.arange(t)[:, None]
    out = np.bincount(idx.ravel(), weights=frames.ravel(), minlength=total)
    norm = np.bincount(idx.ravel(), weights=np.tile(win**2, t), minlength=total)
    nz = norm > 1e-10
    out[nz] /= norm[nz]
    pad = n_fft // 2
    out = out[pad:pad + length]
    if out.size < length:
        out = np.pad(out, (0, length - out.size))
    return out


def hz_to_mel(f):
    # Slaney scale: linear to 1 kHz, logarithmic above
    f = np.asarray(f, dtype=np.float64)
    f_sp = 200.0 / 3
    mels = f / f_sp
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(f >= min_log_hz, min_log_mel + np.log(np.maximum(f, min_log_hz) / min_log_hz) / logstep, mels)


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(m >= min_log_mel, min_log_hz * np.exp(logstep * (m - min_log_mel)), f_sp * m)


def mel_centers(n_mels: int = N_MELS, fmin: float = FMIN, fmax: float = FMAX) -> np.ndarray:
    """Centre frequency (Hz) of each mel filter."""
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    return edges[1:-1]


@lru_cache(maxsize=4)
def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT, sr: int = SAMPLE_RATE,
                   fmin: float = FMIN, fmax: float = FMAX) -> np.ndarray:
    """Triangular filters, each scaled to unit area in Hz. Shape [n_mels, n_fft//2+1]."""
    freqs = np.linspace(0, sr / 2, n_fft // 2 + 1)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    fdiff = np.diff(edges)
    ramps = edges[:, None] - freqs[None, :]
    lower = -ramps[:-2] / fdiff[:-1, None]
    upper = ramps[2:] / fdiff[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    weights *= (2.0 / (edges[2:] - edges[:-2]))[:, None]
    weights.setflags(write=False)
    return weights


def normalize_db(db: np.ndarray, floor_db: float = FLOOR_DB) -> np.ndarray:
    return (np.clip(db, floor_db, 0.0) - floor_db) / -floor_db


def unnormalize_db(values: np.ndarray, floor_db: float = FLOOR_DB) -> np.ndarray:
    return np.asarray(values) * -floor_db + floor_db


def mel_amplitude(wave: Waveform) -> np.ndarray:
    """Linear mel amplitudes [80, T] before log compression."""
    return mel_filterbank() @ np.abs(stft(wave).bins)


def estimate_reference(waves) -> float:
    """Largest mel amplitude over a corpus; becomes the 0 dB reference."""
    peak = max((float(mel_amplitude(w).max()) for w in waves), default=0.0)
    return peak if peak > 0 else DEFAULT_REF


def mel_compress(wave: Waveform, ref: float = DEFAULT_REF, floor_db: float = FLOOR_DB) -> MelSpectrogram:
    amp = mel_amplitude(wave)
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(amp / ref)
    db = np.where(np.isfinite(db), db, floor_db)
    return MelSpectrogram(normalize_db(db, floor_db), source_len=len(wave), floor_db=floor_db, ref=ref)


@lru_cache(maxsize=2)
def _mel_pinv() -> np.ndarray:
    return np.linalg.pinv(mel_filterbank())


def mel_to_linear(amp: np.ndarray, n_iter: int = NNLS_ITERS) -> np.ndarray:
    """Non-negative least-squares lift of mel amplitudes to the 513 linear bins.

    Starts from the clamped pseudo-inverse and refines with multiplicative
    updates, which keep every bin non-negative.
    """
    fb = mel_filterbank()
    lin = np.maximum(_mel_pinv() @ amp, 0.0) + 1e-12
    target = fb.T @ amp
    for _ in range(n_iter):
        lin *= target / np.maximum(fb.T @ (fb @ lin), 1e-20)
    lin[:, ~np.any(amp > 0, axis=0)] = 0.0
    return lin


def spectral_convergence(mag: np.ndarray, estimate: np.ndarray) -> float:
    denom = np.linalg.norm(mag)
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(np.abs(estimate) - mag) / denom)


def griffin_lim(mag: np.ndarray, length: int, n_iter: int = GL_ITERS, momentum: float = GL_MOMENTUM,
                history: list | None = None) -> np.ndarray:
    """Fast Griffin-Lim phase retrieval for a [513, T] magnitude.

    Phase starts at zero so the output is deterministic. When ``history``
    is given, the spectral convergence of each iterate is appended to it.
    """
    prev = np.zeros(mag.shape, dtype=np.complex128)
    x = istft(mag.astype(np.complex128), length)
    for _ in range(n_iter):
        rebuilt = stft(x).bins
        if history is not None:
            history.append(spectral_convergence(mag, rebuilt))
        proj = rebuilt / np.maximum(np.abs(rebuilt), 1e-16)
        accel = proj + momentum * (proj - prev)
        prev = proj
        accel /= np.maximum(np.abs(accel), 1e-16)
        x = istft(mag * accel, length)
    return x


def mel_decompress(mel: MelSpectrogram, n_iter: int = GL_ITERS) -> Waveform:
    v = np.asarray(mel.values, dtype=np.float64)
    want = n_frames(mel.source_len)
    if v.shape[1] < want:
        v = np.pad(v, ((0, 0), (0, want - v.shape[1])))
    v = v[:, :want]
    # floor cells decode to true silence rather than -80 dB hiss
    amp = np.where(v > 0, mel.ref * 10.0 ** (unnormalize_db(v, mel.floor_db) / 20.0), 0.0)
    mag = mel_to_linear(amp)
    if not mag.any():
        return Waveform.silence(mel.source_len)
    x = griffin_lim(mag, mel.source_len, n_iter=n_iter)
    return Waveform(np.clip(x, -1.0, 1.0))


Decompressor = Callable[[MelSpectrogram], Waveform]

_DECOMPRESSORS: dict[str, Decompressor] = {"griffin-lim": mel_decompress}


def register_decompressor(name: str, fn: Decompressor) -> None:
    """Bind an external vocoder under ``name``."""
    _DECOMPRESSORS[name] = fn


def decompress(mel: MelSpectrogram, plugin: str = "griffin-lim") -> Waveform:
    try:
        fn = _DECOMPRESSORS[plugin]
    except KeyError:
        raise ConfigError(f"no decompressor registered as {plugin!r}") from None
    try:
        out = fn(mel)
    except Exception as exc:
        raise DecompressionError(f"decompressor {plugin!r} failed: {exc}") from exc
    if not isinstance(out, Waveform):
        out = Waveform(np.asarray(out))
    return out


def load_wav(path: str | Path) -> Waveform:
    """Read PCM16/PCM32/float WAV at any rate; return 16 kHz mono."""
    try:
        rate, data = wavfile.read(str(path))
    except (ValueError, OSError) as exc:
        raise InputError(f"cannot decode {path}: {exc}") from exc
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    else:
        x = data.astype(np.float64)
    if x.ndim == 2:
        x = x.mean(axis=1)
    if rate != SAMPLE_RATE:
        g = math.gcd(int(rate), SAMPLE_RATE)
        x = resample_poly(x, SAMPLE_RATE // g, int(rate) // g)
    return Waveform(np.clip(x, -1.0, 1.0))


def save_wav(path: str | Path, wave: Waveform) -> None:
    pcm = np.round(np.clip(wave.samples, -1.0, 1.0) * 32767.0).astype(np.int16)
    wavfile.write(str(path), SAMPLE_RATE, pcm)


def fit_length(wave: Waveform, n_samples: int) -> Waveform | None:
    """Crop or zero-pad to ``n_samples``; None when nothing is left."""
    if n_samples <= 0:
        return None
    x = wave.samples[:n_samples]
    if x.size < n_samples:
        x = np.pad(x, (0, n_samples - x.size))
    return Waveform(x)
