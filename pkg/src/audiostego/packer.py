"""Lossless reshaping of audio features into image-shaped secret tensors.

Three secret formats share one [h, w, c] container shape with values in
[0, 1]:

* ``mel``: 80-bin log-mel frames. When ``h`` is a multiple of 80 each
  channel holds two (or more) horizontal stripes of 80 rows, frame index
  running along the columns. Other sizes fall back to a frame-major flat
  fill.
* ``raw``: PCM samples mapped [-1, 1] -> [0, 1], row-major per plane.
* ``stft``: non-overlapping 1600-sample frames, 512 lowest rFFT bins kept,
  real parts then imaginary parts of each frame group.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import audio
from .audio import MelSpectrogram, Waveform
from .errors import InputError

IMAGE_SIZE = 160
STFT_HOP = 1600
STFT_BINS = 512
# rectangular frames of length L have |X_k| <= L for samples in [-1, 1]
DEFAULT_STFT_SCALE = float(STFT_HOP)


class Format(str, Enum):
    MEL = "mel"
    RAW = "raw"
    STFT = "stft"


@dataclass(frozen=True)
class PackedSecret:
    tensor: np.ndarray  # [h, w, c]
    format: Format
    pad_cells: int
    meta: dict = field(default_factory=dict)

    @property
    def channels(self) -> int:
        return self.tensor.shape[2]

    @property
    def shape(self):
        return self.tensor.shape


def n_samples_for(duration_s: float, sr: int = audio.SAMPLE_RATE) -> int:
    # guard against 16000 * 0.1 == 1600.0000000000002
    return math.ceil(round(sr * duration_s, 6))


def mel_frames_per_channel(h: int = IMAGE_SIZE, w: int = IMAGE_SIZE) -> int:
    return (h * w) // audio.N_MELS


def stft_frames_per_channel(h: int = IMAGE_SIZE, w: int = IMAGE_SIZE) -> int:
    return (h * w) // (2 * STFT_BINS)


def channels_for(duration_s: float, fmt: Format | str, h: int = IMAGE_SIZE, w: int = IMAGE_SIZE) -> int:
    """Channel count needed to carry ``duration_s`` seconds in ``fmt``."""
    if not duration_s > 0:
        raise InputError(f"duration must be positive, got {duration_s}")
    fmt = Format(fmt)
    n = n_samples_for(duration_s)
    if fmt is Format.MEL:
        return _ceil_div(audio.content_frames(n), mel_frames_per_channel(h, w))
    if fmt is Format.RAW:
        return _ceil_div(n, h * w)
    return _ceil_div(_ceil_div(n, STFT_HOP), stft_frames_per_channel(h, w))


def max_duration(channels: int, fmt: Format | str, h: int = IMAGE_SIZE, w: int = IMAGE_SIZE) -> float:
    """Longest clip (seconds) that fits into ``channels`` planes."""
    fmt = Format(fmt)
    if fmt is Format.MEL:
        n = channels * mel_frames_per_channel(h, w) * audio.HOP
    elif fmt is Format.RAW:
        n = channels * h * w
    else:
        n = channels * stft_frames_per_channel(h, w) * STFT_HOP
    return n / audio.SAMPLE_RATE


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def _channels(needed: int, requested: int | None) -> int:
    if requested is None:
        return max(needed, 1)
    if requested < needed:
        raise InputError(f"secret needs {needed} channels, only {requested} requested")
    return requested


def _check(p: PackedSecret, fmt: Format):
    if p.format is not fmt:
        raise InputError(f"expected a {fmt.value} secret, got {p.format.value}")


# -- mel ---------------------------------------------------------------------

def pack_mel(mel: MelSpectrogram, h: int = IMAGE_SIZE, w: int = IMAGE_SIZE,
             channels: int | None = None) -> PackedSecret:
    values = mel.values
    nb, t = values.shape
    per = mel_frames_per_channel(h, w)
    c = _channels(_ceil_div(t, per), channels)
    out = np.zeros((h, w, c), dtype=values.dtype)
    if h % nb == 0:
        stripes = h // nb
        padded = np.zeros((nb, c * per), dtype=values.dtype)
        padded[:, :t] = values
        # [nb, c, stripes, w] -> [c, stripes, nb, w] -> [h, w, c]
        blocks = padded.reshape(nb, c, stripes, w).transpose(1, 2, 0, 3)
        out[...] = blocks.reshape(c, h, w).transpose(1, 2, 0)
    else:
        flat = np.zeros((c, h * w), dtype=values.dtype)
        padded = np.zeros((nb, c * per), dtype=values.dtype)
        padded[:, :t] = values
        flat[:, :per * nb] = padded.T.reshape(c, per * nb)
        out[...] = flat.reshape(c, h, w).transpose(1, 2, 0)
    meta = {"n_frames": t, "source_len": mel.source_len, "ref": mel.ref, "floor_db": mel.floor_db}
    return PackedSecret(out, Format.MEL, pad_cells=c * h * w - nb * t, meta=meta)


def unpack_mel(p: PackedSecret) -> MelSpectrogram:
    _check(p, Format.MEL)
    h, w, c = p.tensor.shape
    nb = audio.N_MELS
    t = p.meta["n_frames"]
    per = mel_frames_per_channel(h, w)
    planes = p.tensor.transpose(2, 0, 1)  # [c, h, w]
    if h % nb == 0:
        stripes = h // nb
        values = planes.reshape(c, stripes, nb, w).transpose(2, 0, 1, 3).reshape(nb, c * per)
    else:
        flat = planes.reshape(c, h * w)[:, :per * nb]
        values = flat.reshape(c * per, nb).T
    values = np.clip(values[:, :t], 0.0, 1.0)
    return MelSpectrogram(np.ascontiguousarray(values), source_len=p.meta["source_len"],
                          floor_db=p.meta.get("floor_db", audio.FLOOR_DB),
                          ref=p.meta.get("ref", audio.DEFAULT_REF))


# -- raw ---------------------------------------------------------------------

def pack_raw(wave: Waveform, h: int = IMAGE_SIZE, w: int = IMAGE_SIZE,
             channels: int | None = None) -> PackedSecret:
    x = wave.samples.astype(np.float64)
    n = x.size
    c = _channels(_ceil_div(n, h * w), channels)
    flat = np.zeros(c * h * w)
    flat[:n] = (x + 1.0) / 2.0
    out = flat.reshape(c, h, w).transpose(1, 2, 0)
    return PackedSecret(out, Format.RAW, pad_cells=c * h * w - n, meta={"source_len": n})


def unpack_raw(p: PackedSecret) -> Waveform:
    _check(p, Format.RAW)
    n = p.meta["source_len"]
    flat = p.tensor.transpose(2, 0, 1).reshape(-1)[:n]
    return Waveform(np.clip(flat * 2.0 - 1.0, -1.0, 1.0))


# -- stft --------------------------------------------------------------------

def frame_spectrum(wave: Waveform) -> np.ndarray:
    """Complex [512, T] spectrum of non-overlapping 1600-sample frames."""
    x = wave.samples.astype(np.float64)
    t = _ceil_div(x.size, STFT_HOP)
    frames = np.zeros((t, STFT_HOP))
    frames.reshape(-1)[:x.size] = x
    return np.fft.rfft(frames, axis=1)[:, :STFT_BINS].T


def inverse_frame_spectrum(spec: np.ndarray, length: int) -> np.ndarray:
    full = np.zeros((spec.shape[1], STFT_HOP // 2 + 1), dtype=np.complex128)
    full[:, :STFT_BINS] = spec.T
    return np.fft.irfft(full, n=STFT_HOP, axis=1).reshape(-1)[:length]


def pack_stft(wave: Waveform, h: int = IMAGE_SIZE, w: int = IMAGE_SIZE, channels: int | None = None,
              scale: float = DEFAULT_STFT_SCALE) -> PackedSecret:
    spec = frame_spectrum(wave)
    t = spec.shape[1]
    per = stft_frames_per_channel(h, w)
    c = _channels(_ceil_div(t, per), channels)
    group = np.zeros((c, per, STFT_BINS), dtype=np.complex128)
    group.reshape(c * per, STFT_BINS)[:t] = spec.T
    half = per * STFT_BINS
    flat = np.full((c, h * w), 0.5)
    flat[:, :half] = 0.5 + group.real.reshape(c, half) / (2.0 * scale)
    flat[:, half:2 * half] = 0.5 + group.imag.reshape(c, half) / (2.0 * scale)
    out = flat.reshape(c, h, w).transpose(1, 2, 0)
    meta = {"n_frames": t, "source_len": len(wave), "scale": scale}
    return PackedSecret(out, Format.STFT, pad_cells=c * h * w - 2 * STFT_BINS * t, meta=meta)


def unpack_stft_spectrum(p: PackedSecret) -> np.ndarray:
    """Recover the retained complex [512, T] frame spectrum."""
    _check(p, Format.STFT)
    h, w, c = p.tensor.shape
    per = stft_frames_per_channel(h, w)
    half = per * STFT_BINS
    scale = p.meta["scale"]
    flat = p.tensor.transpose(2, 0, 1).reshape(c, h * w)
    re = (flat[:, :half] - 0.5) * (2.0 * scale)
    im = (flat[:, half:2 * half] - 0.5) * (2.0 * scale)
    spec = (re + 1j * im).reshape(c * per, STFT_BINS)[:p.meta["n_frames"]]
    return spec.T


def unpack_stft(p: PackedSecret) -> Waveform:
    x = inverse_frame_spectrum(unpack_stft_spectrum(p), p.meta["source_len"])
    return Waveform(np.clip(x, -1.0, 1.0))


def pack(wave: Waveform, fmt: Format | str, h: int = IMAGE_SIZE, w: int = IMAGE_SIZE,
         channels: int | None = None, ref: float = audio.DEFAULT_REF,
         stft_scale: float = DEFAULT_STFT_SCALE) -> PackedSecret:
    """Compress (for mel) and pack a waveform in the requested format."""
    fmt = Format(fmt)
    if fmt is Format.MEL:
        mel = audio.mel_compress(wave, ref=ref)
        keep = audio.content_frames(len(wave))
        mel = MelSpectrogram(mel.values[:, :keep], mel.source_len, mel.floor_db, mel.ref)
        return pack_mel(mel, h, w, channels)
    if fmt is Format.RAW:
        return pack_raw(wave, h, w, channels)
    return pack_stft(wave, h, w, channels, scale=stft_scale)


def unpack(p: PackedSecret, decompressor: str = "griffin-lim") -> Waveform:
    """Turn a packed secret back into audio, running the vocoder for mel."""
    if p.format is Format.MEL:
        return audio.decompress(unpack_mel(p), decompressor)
    if p.format is Format.RAW:
        return unpack_raw(p)
    return unpack_stft(p)
