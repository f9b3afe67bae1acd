import struct

import numpy as np
import pytest

from chirpkit.audio_io import AudioClip


def write_wav_pcm16(path, samples, sample_rate, channels=1):
    """Independent minimal WAV writer used as the decode oracle; kept free
    of chirpkit.audio_io on purpose."""
    samples = np.asarray(samples)
    if channels == 1 and samples.ndim == 1:
        interleaved = samples
    else:
        interleaved = samples.reshape(-1)
    ints = np.clip(np.round(interleaved * 32768.0), -32768, 32767).astype("<i2")
    payload = ints.tobytes()
    byte_rate = sample_rate * channels * 2
    with open(path, "wb") as fh:
        fh.write(b"RIFF")
        fh.write(struct.pack("<I", 36 + len(payload)))
        fh.write(b"WAVE")
        fh.write(b"fmt ")
        fh.write(struct.pack("<IHHIIHH", 16, 1, channels, sample_rate, byte_rate, 2 * channels, 16))
        fh.write(b"data")
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)


def sine_clip(freq, sample_rate, seconds, amplitude=0.5):
    t = np.arange(int(seconds * sample_rate)) / sample_rate
    return AudioClip(
        (amplitude * np.sin(2 * np.pi * freq * t)).astype(np.float32), sample_rate
    )


@pytest.fixture
def tmp_wav(tmp_path):
    def _make(name, samples, sample_rate, channels=1):
        path = tmp_path / name
        write_wav_pcm16(path, samples, sample_rate, channels)
        return str(path)

    return _make


# ---------------------------------------------------------------------------
# Acceptance criterion reporting: one pass/fail line per criterion at the end
# ---------------------------------------------------------------------------

def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py::test_criterion_" in nodeid:
                name = nodeid.split("::test_criterion_", 1)[1]
                number, _, slug = name.partition("_")
                status = "PASS" if outcome == "passed" else "FAIL"
                lines.append((int(number), f"criterion {int(number):2d} {status} - {slug.replace('_', ' ')}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
