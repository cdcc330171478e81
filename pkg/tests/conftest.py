import numpy as np
import pytest

from qear.audio_io import AudioSegment, StereoSignal


def brute_mclt(x, h, M):
    """Direct double-loop evaluation of the forward transform."""
    X = np.zeros(M, dtype=complex)
    for k in range(M):
        acc = 0j
        for n in range(2 * M):
            theta = (n + (M + 1) / 2) * (k + 0.5) * np.pi / M
            acc += x[n] * h[n] * np.sqrt(2 / M) * (np.cos(theta) - 1j * np.sin(theta))
        X[k] = acc
    return X


def make_segment(left, right=None, fs=48_000, source_id="seg", index=0):
    right = left if right is None else right
    return AudioSegment(source_id, index, StereoSignal(fs, left, right))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary ---------------------------------------------------------
# Tests marked ``criterion(n, title)`` get one pass/fail line at the end of the run;
# ``criterion_note`` attaches the measured numbers to that line.

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.fixture
def criterion_note(request):
    mark = request.node.get_closest_marker("criterion")
    entry = _CRITERIA.setdefault(mark.args[0], {"title": mark.args[1], "notes": []})

    def note(text):
        entry["notes"].append(str(text))
        print(text)

    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    rep = (yield).get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    entry = _CRITERIA.setdefault(mark.args[0], {"title": mark.args[1], "notes": []})
    if rep.failed or rep.skipped:
        entry["ok"] = False
    elif rep.when == "call":
        entry.setdefault("ok", True)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        if "ok" not in e:
            continue
        status = "PASS" if e["ok"] else "FAIL"
        line = f"criterion {n:2d} {status}  {e['title']}"
        if e["notes"]:
            line += "  [" + "; ".join(e["notes"]) + "]"
        tr.write_line(line, green=e["ok"], red=not e["ok"])
