import numpy as np
import pytest
import torch

from audiostego import synthetic
from audiostego.audio import SAMPLE_RATE, Waveform


@pytest.fixture(autouse=True, scope="session")
def _single_thread():
    torch.set_num_threads(1)


def sine(freq: float, seconds: float, amp: float = 0.5) -> Waveform:
    t = np.arange(int(round(seconds * SAMPLE_RATE))) / SAMPLE_RATE
    return Waveform(amp * np.sin(2 * np.pi * freq * t))


@pytest.fixture
def toy_corpus(tmp_path):
    """8 faces + 8 two-second clips on disk."""
    return synthetic.write_corpus(tmp_path / "corpus", n_images=8, n_clips=8, clip_s=2.0, size=64)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion for the summary."""
    def record(tag: str, ok: bool, detail: str) -> bool:
        line = f"{tag} {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][3:])):
            terminalreporter.write_line(line)
