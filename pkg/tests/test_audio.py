import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from audiostego import audio, metrics
from audiostego.audio import HOP, N_FFT, MelSpectrogram, Waveform
from audiostego.errors import ConfigError, DecompressionError, InputError

from conftest import sine


def test_waveform_rejects_empty_and_nan():
    with pytest.raises(InputError):
        Waveform(np.zeros(0))
    with pytest.raises(InputError):
        Waveform(np.array([0.0, np.nan]))
    with pytest.raises(InputError):
        Waveform(np.zeros(10), sample_rate=8000)


@pytest.mark.parametrize("n, frames", [(16000, 63), (160000, 626), (256, 2), (255, 1)])
def test_stft_frame_count(n, frames):
    assert audio.stft(Waveform(np.ones(n) * 0.1)).n_frames == frames
    # direct count: frame centres at 0, 256, ... that do not pass the end
    assert len(range(0, n + 1, HOP)) == frames


def test_stft_matches_direct_dft_on_one_frame():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, 4000)
    spec = audio.stft(Waveform(x)).bins
    x32 = Waveform(x).samples.astype(np.float64)
    k = 5
    start = k * HOP - N_FFT // 2  # fully inside the signal, no reflection
    frame = x32[start:start + N_FFT] * (0.5 - 0.5 * np.cos(2 * np.pi * np.arange(N_FFT) / N_FFT))
    n = np.arange(N_FFT)
    direct = np.array([np.sum(frame * np.exp(-2j * np.pi * b * n / N_FFT)) for b in range(0, 513, 37)])
    np.testing.assert_allclose(spec[::37, k], direct, rtol=1e-9, atol=1e-9)


def test_stft_of_silence_is_zero():
    assert not np.any(audio.stft(Waveform.silence(5000)).bins)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float32, st.integers(300, 3000), elements=st.floats(-1, 1, width=32)),
       st.floats(-4, 4).filter(lambda a: abs(a) > 1e-3))
def test_stft_is_linear(x, a):
    s = audio.stft(Waveform(x)).bins
    scaled = audio.stft(Waveform(x).samples.astype(np.float64) * a).bins
    np.testing.assert_allclose(scaled, a * s, rtol=1e-5, atol=1e-5 * max(np.abs(s).max(), 1e-12) * abs(a))


def test_istft_inverts_stft():
    x = np.random.default_rng(0).uniform(-1, 1, 7777)
    spec = audio.stft(x).bins
    np.testing.assert_allclose(audio.istft(spec, x.size), x, atol=1e-10)


def _triangle_bank():
    """Independent filterbank: explicit loops over Slaney-scale edges."""
    def to_mel(f):
        return f / (200 / 3) if f < 1000 else 15 + np.log(f / 1000) / (np.log(6.4) / 27)

    def to_hz(m):
        return m * (200 / 3) if m < 15 else 1000 * np.exp((m - 15) * np.log(6.4) / 27)

    top = to_mel(8000.0)
    edges = [to_hz(top * i / 81) for i in range(82)]
    freqs = [16000 / 2 * b / 512 for b in range(513)]
    bank = np.zeros((80, 513))
    for m in range(80):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        for b, f in enumerate(freqs):
            if lo < f <= mid:
                w = (f - lo) / (mid - lo)
            elif mid < f < hi:
                w = (hi - f) / (hi - mid)
            else:
                w = 0.0
            bank[m, b] = w * 2 / (hi - lo)
    return bank, np.array(edges[1:-1])


def test_filterbank_matches_independent_construction():
    bank, centres = _triangle_bank()
    np.testing.assert_allclose(audio.mel_filterbank(), bank, atol=1e-12)
    np.testing.assert_allclose(audio.mel_centers(), centres, rtol=1e-12)


def test_sine_energy_concentrates_around_440():
    wave = sine(440, 1.0)
    mel = audio.mel_compress(wave)
    bank, centres = _triangle_bank()
    hi = int(np.searchsorted(centres, 440.0))
    bracket = {hi - 1, hi}
    assert centres[hi - 1] <= 440 < centres[hi]

    frame = 30
    # oracle: direct DFT of the same analysis frame, independent bank
    x = wave.samples.astype(np.float64)
    seg = x[frame * HOP - N_FFT // 2: frame * HOP + N_FFT // 2]
    seg = seg * (0.5 - 0.5 * np.cos(2 * np.pi * np.arange(N_FFT) / N_FFT))
    mag = np.abs(np.fft.fft(seg))[:513]
    db = np.clip(20 * np.log10(np.maximum(bank @ mag, 1e-30) / audio.DEFAULT_REF), -80, 0)
    expected = (db + 80) / 80
    np.testing.assert_allclose(mel.values[:, frame], expected, atol=1e-6)

    col = mel.values[:, frame]
    assert int(np.argmax(col)) in bracket
    # the Hann main lobe spans about +-31 Hz, so the filters directly
    # adjacent to the bracketing pair also respond; beyond them it is quiet
    far = [m for m in range(80) if min(abs(m - b) for b in bracket) >= 3]
    assert col[far].max() <= 0.1


def test_mel_of_silence_is_floor():
    mel = audio.mel_compress(Waveform.silence(8000))
    assert mel.values.shape[0] == 80
    assert not mel.values.any()


def test_silence_round_trip_is_silence():
    out = audio.mel_decompress(audio.mel_compress(Waveform.silence(8000)))
    assert len(out) == 8000
    assert not out.samples.any()


@settings(max_examples=20, deadline=None)
@given(arrays(np.float32, st.integers(256, 4000), elements=st.floats(-1, 1, width=32)))
def test_mel_values_in_unit_interval(x):
    v = audio.mel_compress(Waveform(x)).values
    assert v.shape == (80, 1 + x.size // HOP)
    assert v.min() >= 0.0 and v.max() <= 1.0


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (80, 7), elements=st.floats(-80, 0)))
def test_normalization_round_trip(db):
    np.testing.assert_allclose(audio.unnormalize_db(audio.normalize_db(db)), db, atol=1e-6)


def test_sine_round_trip_lsd_and_length():
    wave = sine(440, 1.0)
    out = audio.mel_decompress(audio.mel_compress(wave))
    assert abs(len(out) - len(wave)) <= HOP
    assert metrics.lsd(wave, out) < 2.5


def test_ten_second_output_length():
    wave = sine(440, 10.0)
    out = audio.mel_decompress(audio.mel_compress(wave))
    assert 160000 - 256 <= len(out) <= 160000 + 256


def test_trimmed_mel_still_decodes_to_full_length():
    wave = sine(300, 1.0)
    mel = audio.mel_compress(wave)
    trimmed = MelSpectrogram(mel.values[:, :audio.content_frames(len(wave))], mel.source_len)
    assert len(audio.mel_decompress(trimmed)) == len(wave)


def test_griffin_lim_convergence_non_increasing():
    ramp = np.sin(2 * np.pi * 220 * np.arange(12000) / 16000) * np.linspace(0.1, 0.8, 12000)
    mel = audio.mel_compress(Waveform(ramp))
    amp = np.where(mel.values > 0, mel.ref * 10 ** (audio.unnormalize_db(mel.values) / 20), 0)
    history = []
    audio.griffin_lim(audio.mel_to_linear(amp), 12000, n_iter=60, history=history)
    assert len(history) == 60
    assert history[0] >= history[9] >= history[59]


def test_mel_to_linear_is_non_negative_and_fits():
    amp = audio.mel_amplitude(sine(1000, 0.5))
    lin = audio.mel_to_linear(amp)
    assert lin.min() >= 0
    fb = audio.mel_filterbank()
    assert np.linalg.norm(fb @ lin - amp) < 0.05 * np.linalg.norm(amp)


def test_decompressor_default_matches_griffin_lim():
    mel = audio.mel_compress(sine(440, 0.5))
    a = audio.decompress(mel)
    b = audio.mel_decompress(mel)
    assert np.array_equal(a.samples, b.samples)


def test_decompressor_unknown_name():
    with pytest.raises(ConfigError):
        audio.decompress(audio.mel_compress(sine(440, 0.1)), "wavenet")


def test_decompressor_plugin_and_failure():
    mel = audio.mel_compress(sine(440, 0.25))
    audio.register_decompressor("stub-silence", lambda m: Waveform.silence(m.source_len))
    out = audio.decompress(mel, "stub-silence")
    assert not out.samples.any() and len(out) == mel.source_len

    def broken(m):
        raise RuntimeError("vocoder offline")

    audio.register_decompressor("stub-broken", broken)
    with pytest.raises(DecompressionError):
        audio.decompress(mel, "stub-broken")


def test_wav_io_resamples_and_downmixes(tmp_path):
    from scipy.io import wavfile

    t = np.arange(44100) / 44100
    stereo = np.stack([np.sin(2 * np.pi * 440 * t), np.sin(2 * np.pi * 440 * t)], 1) * 0.5
    wavfile.write(tmp_path / "s.wav", 44100, (stereo * 32767).astype(np.int16))
    wave = audio.load_wav(tmp_path / "s.wav")
    assert wave.sample_rate == 16000
    assert abs(len(wave) - 16000) <= 1
    audio.save_wav(tmp_path / "o.wav", wave)
    rate, data = wavfile.read(tmp_path / "o.wav")
    assert rate == 16000 and data.dtype == np.int16 and data.ndim == 1


def test_wav_float32_input(tmp_path):
    from scipy.io import wavfile

    x = (np.random.default_rng(0).uniform(-0.5, 0.5, 1600)).astype(np.float32)
    wavfile.write(tmp_path / "f.wav", 16000, x)
    np.testing.assert_array_equal(audio.load_wav(tmp_path / "f.wav").samples, x)


def test_unreadable_wav(tmp_path):
    (tmp_path / "bad.wav").write_bytes(b"not a wav")
    with pytest.raises(InputError):
        audio.load_wav(tmp_path / "bad.wav")
