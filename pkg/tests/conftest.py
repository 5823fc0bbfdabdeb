import os
import sys

import pytest
import torch

torch.set_num_threads(1)

sys.path.insert(0, os.path.dirname(__file__))

from unhaze.data import generate_synthetic_set, load_paired_dataset, make_clear_set

# one line per acceptance criterion, echoed after the run summary so the
# verdicts survive pytest's output capture
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def toy_dataset_dirs(tmp_path_factory):
    """8 synthetic 64x64 hazy/clear pairs, fixed seeds."""
    root = tmp_path_factory.mktemp("toydata")
    clear_src = root / "clear_src"
    make_clear_set(str(clear_src), 8, 64, seed=11)
    out = root / "pairs"
    generate_synthetic_set(str(clear_src), str(out), seed=5)
    return str(out / "hazy"), str(out / "clear")


@pytest.fixture(scope="session")
def toy_dataset(toy_dataset_dirs):
    hazy_dir, clear_dir = toy_dataset_dirs
    return load_paired_dataset(hazy_dir, clear_dir)
