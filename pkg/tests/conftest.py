import sys
import time
from pathlib import Path

import pytest

from cmg import pipeline, synthdata

sys.path.insert(0, str(Path(__file__).parent))

# small enough to train every variant in a couple of seconds
TINY_TEXT = """
gen.samples_per_class = 20
matching.epochs = 4
rid.epochs = 4
latent.epochs = 4
seeds = 0,1
"""


@pytest.fixture(scope="session")
def default_dataset():
    return synthdata.generate(synthdata.GenConfig())


@pytest.fixture(scope="session")
def tiny_config():
    return pipeline.RunConfig.from_text(TINY_TEXT)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_config):
    return synthdata.generate(tiny_config.gen)


@pytest.fixture(scope="session")
def tiny_bundles(tiny_dataset, tiny_config):
    cfg = tiny_config.with_seed(0)
    cache = {}
    return {v: pipeline.train_cmg(tiny_dataset, cfg, v, cache=cache) for v in pipeline.Variant}


@pytest.fixture(scope="session")
def default_cmg_bundle(default_dataset):
    """CMG trained at full default settings, seed 0."""
    return pipeline.train_cmg(default_dataset, pipeline.RunConfig().with_seed(0), "CMG")


# wall-clock seconds of the expensive session fixtures
TIMINGS = {}
# one (criterion, passed, detail) entry per acceptance check, printed at the end of the run
ACCEPTANCE = []


@pytest.fixture(scope="session")
def default_ablation(default_dataset):
    """All variants over the five default seeds; shared by the acceptance and pipeline tests."""
    start = time.perf_counter()
    report = pipeline.ablate(default_dataset, pipeline.RunConfig())
    TIMINGS["ablation"] = time.perf_counter() - start
    return report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
