import struct

import numpy as np
import pytest


def wav_bytes(payload: bytes, channels=1, rate=8000, bits=16, tag=1) -> bytes:
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, rate, rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    return b"RIFF" + struct.pack("<I", len(body)) + body


@pytest.fixture
def write_wav_file(tmp_path):
    counter = iter(range(10_000))

    def _write(payload, **kw):
        path = tmp_path / f"clip{next(counter)}.wav"
        path.write_bytes(wav_bytes(payload, **kw))
        return path

    return _write


def sine(freq, seconds=1.0, rate=8000, amp=1.0, phase=0.0):
    t = np.arange(int(round(seconds * rate))) / rate
    return amp * np.sin(2 * np.pi * freq * t + phase)


# acceptance criteria report, filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {n}: {title} | {detail}")
