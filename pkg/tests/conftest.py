import json
from pathlib import Path

import numpy as np
import pytest

from okwugbe.audio import Waveform, write_wav


def make_wav(path: Path, seconds: float, rate: int = 8000, seed: int = 0) -> Path:
    n = int(round(seconds * rate))
    samples = 0.1 * np.random.default_rng(seed).standard_normal(n)
    write_wav(path, Waveform(np.clip(samples, -1, 1), rate))
    return path


def make_manifest(directory: Path, items, name: str = "manifest.jsonl", rate: int = 8000) -> Path:
    """``items`` are ``(id, text, seconds)``; writes one WAV per item and a manifest."""
    (directory / "wav").mkdir(parents=True, exist_ok=True)
    lines = []
    for i, (uid, text, seconds) in enumerate(items):
        make_wav(directory / "wav" / f"{uid}.wav", seconds, rate, seed=i)
        lines.append(json.dumps({"id": uid, "audio_path": f"wav/{uid}.wav", "text": text}, ensure_ascii=False))
    path = directory / name
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


@pytest.fixture
def manifest_factory(tmp_path):
    def factory(items, name="manifest.jsonl", rate=8000):
        return make_manifest(tmp_path, items, name, rate)

    return factory


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
