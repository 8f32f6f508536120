import shutil
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from htcan.config import PipelineConfig
from htcan.pipeline import init_pipeline_weights, save_weights


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def toy_pipeline_dir(tmp: Path, seed: int = 0, noise: float = 0.05) -> Path:
    src = resources.files("htcan").joinpath("presets/toy_pipeline.json")
    cfg_path = tmp / "pipeline.json"
    shutil.copyfile(str(src), cfg_path)
    cfg = PipelineConfig.load(cfg_path)
    save_weights(cfg, init_pipeline_weights(cfg, seed, noise))
    return cfg_path


@pytest.fixture
def toy_config(tmp_path):
    return toy_pipeline_dir(tmp_path)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS, key=lambda k: int(k.split(".")[0])):
        ok, detail = RESULTS[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
