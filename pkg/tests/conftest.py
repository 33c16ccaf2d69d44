import numpy as np
import pytest

from narrative_graph.config import TrainConfig
from narrative_graph.datamodel import SyntheticSpec, generate_synthetic

SMALL_DIMS = {"text": 6, "audio": 4, "visual": 4}


def small_config(**overrides) -> TrainConfig:
    """Tiny model dimensions so finite-difference checks stay fast."""
    values = dict(hidden=3, d_proj=3, d_fused=4, d_sim=4, d_gcn=4, size_input=8, size_hidden=4,
                  max_neighbors=3, epochs=2)
    values.update(overrides)
    return TrainConfig(**values)


def small_spec(**overrides) -> SyntheticSpec:
    values = dict(movie_count=4, scene_range=(10, 16), d_text=6, d_audio=4, d_visual=4,
                  sentence_range=(1, 3), audio_range=(0, 2), frame_range=(0, 2), seed=3)
    values.update(overrides)
    return SyntheticSpec(**values)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_corpus():
    return generate_synthetic(small_spec())


@pytest.fixture(scope="session")
def toy_corpus():
    """Two six-scene movies with audio and frames on every scene."""
    return generate_synthetic(small_spec(movie_count=2, scene_range=(6, 6), audio_range=(1, 2),
                                         frame_range=(1, 2), anchors=(0.1, 0.3, 0.5, 0.65, 0.85),
                                         position_jitter=0.0))


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def record_acceptance(name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
