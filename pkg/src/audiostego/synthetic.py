"""Small synthetic corpora: speech-like clips and face-like images.

Used by the test-suite and the demo commands when no real corpus is at
hand. Everything is a pure function of the seed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .audio import SAMPLE_RATE, Waveform, save_wav


def speech_like(duration_s: float, seed: int = 0, sr: int = SAMPLE_RATE) -> Waveform:
    """Harmonic voice with a wandering pitch, syllable envelope and a little breath noise."""
    rng = np.random.default_rng(seed)
    n = max(int(round(duration_s * sr)), 1)
    t = np.arange(n) / sr
    f0 = rng.uniform(90, 220) * (1 + 0.08 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t))
    phase = 2 * np.pi * np.cumsum(f0) / sr
    voice = sum(np.sin(k * phase) / k**1.2 for k in range(1, 16) if k * f0.max() < sr / 2)
    rate = rng.uniform(3, 6)
    env = np.clip(np.sin(2 * np.pi * rate * t + rng.uniform(0, np.pi)), 0, None) ** 2
    noise = rng.normal(0, 0.02, n)
    x = env * voice + noise * (1 - env)
    x = 0.6 * x / max(np.abs(x).max(), 1e-9)
    return Waveform(x)


def face_like(size: int = 160, seed: int = 0) -> np.ndarray:
    """Smooth RGB image in [0, 1] with an oval 'face' over a gradient backdrop."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    bg = np.stack([0.3 + 0.4 * yy, 0.4 + 0.3 * xx, 0.5 + 0.2 * (1 - yy)], -1) * rng.uniform(0.6, 1.0, 3)
    cy, cx = 0.5 + rng.uniform(-0.05, 0.05, 2)
    ry, rx = rng.uniform(0.3, 0.4), rng.uniform(0.22, 0.3)
    inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 < 1
    skin = np.array([0.85, 0.65, 0.55]) * rng.uniform(0.7, 1.0)
    img = np.where(inside[..., None], skin * (1 - 0.3 * (yy - cy)[..., None]), bg)
    for ex in (cx - rx / 2.5, cx + rx / 2.5):
        eye = ((yy - (cy - ry / 4)) / 0.03) ** 2 + ((xx - ex) / 0.05) ** 2 < 1
        img[eye] = 0.1
    img += rng.normal(0, 0.01, img.shape)
    return np.clip(img, 0, 1).astype(np.float32)


def write_corpus(root: str | Path, n_images: int = 8, n_clips: int = 8, clip_s: float = 2.0,
                 size: int = 160, seed: int = 0) -> tuple[Path, Path]:
    """Write PNG images and WAV clips under ``root``; return (image_dir, audio_dir)."""
    root = Path(root)
    img_dir, wav_dir = root / "images", root / "audio"
    img_dir.mkdir(parents=True, exist_ok=True)
    wav_dir.mkdir(parents=True, exist_ok=True)
    for i in range(n_images):
        arr = (face_like(size, seed + i) * 255).round().astype(np.uint8)
        Image.fromarray(arr).save(img_dir / f"face_{i:03d}.png")
    for i in range(n_clips):
        save_wav(wav_dir / f"clip_{i:03d}.wav", speech_like(clip_s, seed + 1000 + i))
    return img_dir, wav_dir
