from pathlib import Path

import numpy as np
import pytest

from forecast_eval import synthetic


def write(path: Path, text: str) -> Path:
    path.write_text(text.lstrip("\n"), encoding="utf-8")
    return path


@pytest.fixture
def csv_dir(tmp_path):
    return tmp_path


@pytest.fixture
def small_effect_files(tmp_path):
    effects = write(tmp_path / "effects.csv", """
treatment_id,estimate,variance
a,0.5,0.04
b,-0.25,0.09
""")
    forecasts = write(tmp_path / "forecasts.csv", """
treatment_id,forecaster_id,prediction
a,f1,1.0
a,f2,0.5
a,f3,0.0
b,f1,2.0
b,f2,-1.0
b,f3,0.25
""")
    return effects, forecasts


@pytest.fixture(scope="session")
def exercise_like():
    """Small analogue of a nudge megastudy: tiny true effects, large forecasts."""
    spec = synthetic.SyntheticStudySpec(
        K=53, F=90, true_effect_prior=synthetic.NormalPrior(0.17, 0.01), noise_sd=0.05,
        forecaster_bias=2.3, forecaster_noise_sd=1.0, forecaster_effect_sd=0.5,
        correlation=0.2, seed=11,
    )
    return synthetic.generate(spec)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
