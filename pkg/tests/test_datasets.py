import numpy as np
import pytest
from PIL import Image

from audiostego import audio, synthetic
from audiostego.datasets import PairSource, build_index, iter_batches, load_image, splice_clips
from audiostego.errors import InputError


def test_split_sizes_and_determinism(toy_corpus):
    img_dir, wav_dir = toy_corpus
    a = build_index(img_dir, wav_dir, 0.8, seed=3)
    b = build_index(img_dir, wav_dir, 0.8, seed=3)
    assert a == b
    # 8 items at 0.8 -> round(6.4) = 6 train, 2 test
    assert (len(a.train_images), len(a.test_images)) == (6, 2)
    assert (len(a.train_audio), len(a.test_audio)) == (6, 2)
    assert not set(a.train_images) & set(a.test_images)


def test_ten_items_split_eight_two(tmp_path):
    img_dir, wav_dir = synthetic.write_corpus(tmp_path, n_images=10, n_clips=10, clip_s=0.5, size=32)
    idx = build_index(img_dir, wav_dir, 0.8)
    assert (len(idx.train_images), len(idx.test_images)) == (8, 2)


def test_different_seed_reshuffles(toy_corpus):
    a = build_index(*toy_corpus, seed=0)
    b = build_index(*toy_corpus, seed=1)
    assert a.train_images != b.train_images


def test_empty_directory(tmp_path, toy_corpus):
    (tmp_path / "empty").mkdir()
    with pytest.raises(InputError):
        build_index(tmp_path / "empty", toy_corpus[1])
    with pytest.raises(InputError):
        build_index(toy_corpus[0], tmp_path / "empty")
    with pytest.raises(InputError):
        build_index(tmp_path / "missing", toy_corpus[1])


def test_unreadable_files_are_skipped(toy_corpus, caplog):
    img_dir, wav_dir = toy_corpus
    (img_dir / "broken.png").write_bytes(b"garbage")
    (wav_dir / "broken.wav").write_bytes(b"garbage")
    idx = build_index(img_dir, wav_dir)
    assert len(idx.train_images) + len(idx.test_images) == 8
    assert len(idx.train_audio) + len(idx.test_audio) == 8
    assert "broken" in caplog.text


def test_all_unreadable(tmp_path, toy_corpus):
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "x.png").write_bytes(b"nope")
    with pytest.raises(InputError):
        build_index(bad, toy_corpus[1])


def test_duplicate_names_in_subdirectories(tmp_path):
    img_dir, wav_dir = synthetic.write_corpus(tmp_path / "a", n_images=3, n_clips=3, clip_s=0.5, size=32)
    synthetic.write_corpus(tmp_path / "a" / "images" / "more", n_images=3, n_clips=0, clip_s=0.5, size=32)
    idx = build_index(img_dir, wav_dir)
    paths = idx.train_images + idx.test_images
    assert len(paths) == 6
    assert len({p.name for p in paths}) == 3


def test_load_image_resizes(tmp_path):
    Image.fromarray(np.full((50, 70, 3), 128, np.uint8)).save(tmp_path / "x.png")
    img = load_image(tmp_path / "x.png", 64)
    assert img.shape == (64, 64, 3) and img.dtype == np.float32
    np.testing.assert_allclose(img, 128 / 255, atol=1e-6)


def test_pair_source_channels(toy_corpus):
    idx = build_index(*toy_corpus)
    assert PairSource(idx, (0, 10), size=160).channels == 2
    assert PairSource(idx, (0, 2), size=64).channels == 3


def test_zero_duration_secret_is_empty(toy_corpus):
    idx = build_index(*toy_corpus)
    src = PairSource(idx, (0, 2), size=64)
    p = src.secret(src.clip(0), 0.0)
    assert p.shape == (64, 64, 3) and not p.tensor.any()


def test_secret_matches_direct_pack(toy_corpus):
    from audiostego import packer

    idx = build_index(*toy_corpus)
    src = PairSource(idx, (0, 2), size=64)
    wave = src.clip(1)
    expected = packer.pack(audio.fit_length(wave, 16000), "mel", 64, 64, channels=3)
    assert np.array_equal(src.secret(wave, 1.0).tensor, expected.tensor)


def test_batches_are_reproducible(toy_corpus):
    idx = build_index(*toy_corpus)
    src = PairSource(idx, (0, 2), size=64)
    a = list(iter_batches(src, 4, seed=0, epoch=0))
    b = list(iter_batches(src, 4, seed=0, epoch=0))
    c = list(iter_batches(src, 4, seed=0, epoch=1))
    assert [x[0].shape for x in a] == [(4, 3, 64, 64), (2, 3, 64, 64)]
    assert all(np.array_equal(x[1], y[1]) for x, y in zip(a, b))
    assert not all(np.array_equal(x[1], y[1]) for x, y in zip(a, c))


def test_batches_with_audio_covers(toy_corpus):
    idx = build_index(*toy_corpus)
    src = PairSource(idx, (0, 2), size=64)
    images, secrets, covers = next(iter_batches(src, 3, seed=0, epoch=0, n_audio_covers=1))
    assert len(covers) == 1 and covers[0].shape == secrets.shape == (3, 3, 64, 64)


def test_splice_reaches_target(toy_corpus):
    idx = build_index(*toy_corpus)
    wave = splice_clips(idx, 5.0)
    assert len(wave) == 80000
    first = audio.load_wav(idx.train_audio[0].path)
    np.testing.assert_array_equal(wave.samples[:len(first)], first.samples)


def test_splice_too_long(toy_corpus):
    idx = build_index(*toy_corpus)
    with pytest.raises(InputError):
        splice_clips(idx, 60.0)
