"""Image and audio quality measures plus the capacity-sweep report."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields
from functools import lru_cache

import numpy as np
from scipy.signal import convolve2d

from . import audio
from .audio import Waveform
from .errors import InputError

PSNR_CAP = 100.0
LUMA = np.array([0.299, 0.587, 0.114])


def psnr(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(10.0 * np.log10(data_range**2 / mse), PSNR_CAP))


@lru_cache(maxsize=2)
def _gaussian(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _gray(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3 and x.shape[-1] == 3:
        return x @ LUMA
    if x.ndim == 3 and x.shape[-1] == 1:
        return x[..., 0]
    return x


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over 11x11 Gaussian (sigma 1.5) windows on the luma plane."""
    if np.shape(a) != np.shape(b):
        raise InputError(f"shape mismatch {np.shape(a)} vs {np.shape(b)}")
    x, y = _gray(a), _gray(b)
    win = _gaussian()
    if min(x.shape) < win.shape[0]:
        raise InputError(f"image {x.shape} smaller than the {win.shape[0]}x{win.shape[0]} window")

    def filt(z):
        return convolve2d(z, win, mode="valid")

    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx**2
    syy = filt(y * y) - my**2
    sxy = filt(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx**2 + my**2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def lsd(a: Waveform, b: Waveform, floor_db: float = audio.FLOOR_DB) -> float:
    """Log-spectral distance in dB.

    Each magnitude spectrogram is floored ``floor_db`` below its own peak,
    then the per-frame RMS of the dB difference is RMS-averaged over frames.
    """
    n = min(len(a), len(b))
    if n == 0:
        raise InputError("no overlapping samples")
    specs = []
    for w in (a, b):
        mag = np.abs(audio.stft(w.samples[:n]).bins)
        floor = max(mag.max() * 10 ** (floor_db / 20), 1e-8)
        specs.append(20 * np.log10(np.maximum(mag, floor)))
    diff = specs[0] - specs[1]
    per_frame = np.mean(diff**2, axis=0)
    return float(np.sqrt(np.mean(per_frame)))


def sig6(x: float) -> float:
    """Round to the 6 significant digits the report serialises."""
    return float(f"{x:.6g}")


@dataclass
class QualityRow:
    range_s: str
    format: str
    layer: int
    psnr_db: float
    ssim: float
    lsd_db: float
    n_samples: int

    def __post_init__(self):
        self.layer = int(self.layer)
        self.n_samples = int(self.n_samples)
        self.psnr_db = sig6(float(self.psnr_db))
        self.ssim = sig6(float(self.ssim))
        self.lsd_db = sig6(float(self.lsd_db))


def format_range(lo: float, hi: float) -> str:
    return f"{lo:g}-{hi:g}"


# Full-scale reference points (LJ Speech, 160x160); annotation only.
REFERENCE_POINTS = {"0-20": (39.72, 0.970), "0-80": (28.25, 0.811)}


@dataclass
class QualityReport:
    rows: list[QualityRow] = field(default_factory=list)

    COLUMNS = tuple(f.name for f in fields(QualityRow))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.COLUMNS)
        for r in self.rows:
            writer.writerow([r.range_s, r.format, r.layer, f"{r.psnr_db:.6g}", f"{r.ssim:.6g}",
                             f"{r.lsd_db:.6g}", r.n_samples])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "QualityReport":
        reader = csv.DictReader(io.StringIO(text))
        return cls([QualityRow(**row) for row in reader])

    def to_table(self) -> str:
        header = ["range_s", "format", "layer", "psnr_db", "ssim", "lsd_db", "n_samples"]
        body = [[r.range_s, r.format, str(r.layer), f"{r.psnr_db:.6g}", f"{r.ssim:.6g}", f"{r.lsd_db:.6g}",
                 str(r.n_samples)] for r in self.rows]
        widths = [max(len(h), *(len(row[i]) for row in body)) if body else len(h) for i, h in enumerate(header)]
        lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
        lines += ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in body]
        return "\n".join(lines)

    def psnr_by_range(self) -> list[float]:
        return [r.psnr_db for r in self.rows]


def mean_finite(values) -> float:
    vals = [v for v in values if math.isfinite(v)]
    return float(np.mean(vals)) if vals else float("nan")


def capacity_sweep(models: dict, index, ranges: list[tuple[float, float]], n_samples: int | None = None,
                   split: str = "test", seed: int = 0, quantize: bool = True,
                   min_duration: float = 0.25) -> QualityReport:
    """Container fidelity and revealed-audio distortion per duration range.

    ``models`` maps each (lo, hi) range to a trained single-layer
    :class:`~audiostego.pipeline.Model`. Durations are drawn uniformly from
    the range (at least ``min_duration`` so every clip is audible). With
    ``quantize`` the container goes through the 8-bit PNG export before
    revealing, as it would on disk.
    """
    from .datasets import PairSource
    from .errors import ConfigError
    from .pipeline import to_uint8

    report = QualityReport()
    for lo, hi in ranges:
        model = models.get((lo, hi))
        if model is None:
            raise ConfigError(f"no checkpoint for range {format_range(lo, hi)} s")
        source = PairSource(index, (max(lo, min_duration), hi), model.size, model.format, ref=model.ref,
                            stft_scale=model.stft_scale, split=split)
        rng = np.random.default_rng([seed, int(hi * 1000)])
        count = n_samples or source.index.size(split)
        p_vals, s_vals, l_vals = [], [], []
        for item in range(count):
            duration = source.draw_duration(rng)
            image = source.image(item)
            clip = audio.fit_length(source.clip(item), min(round(duration * audio.SAMPLE_RATE),
                                                           round(hi * audio.SAMPLE_RATE)))
            container = model.embed(image, clip)
            if quantize:
                container = to_uint8(container).astype(np.float32) / 255.0
            p_vals.append(psnr(np.clip(container, 0, 1), image))
            s_vals.append(ssim(np.clip(container, 0, 1), image))
            l_vals.append(lsd(clip, model.reveal(container, len(clip))))
        report.rows.append(QualityRow(format_range(lo, hi), model.format.value, 1, mean_finite(p_vals),
                                      mean_finite(s_vals), mean_finite(l_vals), count))
    return report
