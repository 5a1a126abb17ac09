import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def disk(shape, cx, cy, r):
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]]
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """30 small synthetic images on disk (15 per class)."""
    from lesionkit.synth import gen_corpus

    out = tmp_path_factory.mktemp("small_corpus")
    gen_corpus(15, 15, "small", 11, out)
    return out


@pytest.fixture(scope="session")
def small_features(small_corpus):
    from lesionkit.config import RunConfig
    from lesionkit.pipeline import corpus_features
    from lesionkit.synth import load_manifest

    _, entries = load_manifest(small_corpus)
    res = corpus_features(entries, RunConfig())
    assert all(r.error is None for r in res), [r.error for r in res if r.error]
    X = np.array([r.features for r in res])
    y = np.array([e.label for e in entries])
    return X, y


def pytest_configure(config):
    config._acceptance = []


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "_acceptance", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request, capsys):
    """Record (and print) one PASS/FAIL line for an acceptance criterion."""

    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
        request.config._acceptance.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return record
