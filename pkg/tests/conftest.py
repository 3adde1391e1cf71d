from pathlib import Path

import numpy as np
import pytest
import torch

from storymotion.database import DatabaseConfig, MotionDatabase
from storymotion.skeletons import smpl_like_skeleton
from storymotion.synthetic import SyntheticSpec, generate_synthetic_database

FIXTURES = Path(__file__).parent / "fixtures"

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def fixtures() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def skeleton():
    return smpl_like_skeleton()


@pytest.fixture(scope="session")
def small_clips():
    """Fixed-speed walks, turns and stationary clips only."""
    return generate_synthetic_database(SyntheticSpec(meanders=0), seed=0)


@pytest.fixture(scope="session")
def small_db(small_clips, skeleton):
    return MotionDatabase.build(small_clips, skeleton, DatabaseConfig(train_ae=False))


@pytest.fixture(scope="session")
def full_db(skeleton):
    """Default synthetic database with learned features."""
    return MotionDatabase.build(generate_synthetic_database(seed=0), skeleton)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
