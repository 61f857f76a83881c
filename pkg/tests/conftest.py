import numpy as np
import pytest

from physgold.signal import SignalBundle, TimeSeries


def series(values, fs=2.0, name="X", t0=0.0, subject="s0"):
    return TimeSeries(subject, name, fs, np.asarray(values, dtype=float), t0)


def bundle(**channels):
    return SignalBundle.from_arrays("s0", 2.0, channels)


def smooth_signal(rng, n, n_waves=4):
    t = np.arange(n)
    x = np.zeros(n)
    for _ in range(n_waves):
        x += rng.uniform(0.5, 1.0) * np.sin(2 * np.pi * rng.uniform(1 / 400, 1 / 40) * t + rng.uniform(0, 2 * np.pi))
    return x


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def tree_bytes(root):
    """Relative path -> file contents for every file under ``root``."""
    from pathlib import Path

    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def write_csv(path, header, rows):
    from pathlib import Path

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)] + [",".join(repr(float(v)) if not isinstance(v, str) else v for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Run one acceptance check, record a PASS/FAIL line, then assert."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def check(number, title, body):
        try:
            ok, detail = body()
        except Exception as exc:  # recorded, then re-raised for pytest
            lines.append((number, f"FAIL  {number:2d}. {title}: {type(exc).__name__}: {exc}"))
            raise
        line = f"{'PASS' if ok else 'FAIL'}  {number:2d}. {title}: {detail}"
        lines.append((number, line))
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
