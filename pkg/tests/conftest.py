from dataclasses import replace

import pytest

from otpt_lab.model import init_prompt
from otpt_lab.synthdata import BENCHMARK_SPEC, generate_dataset


@pytest.fixture(scope="session")
def small_ds():
    return generate_dataset(replace(BENCHMARK_SPEC, n_test=40))


@pytest.fixture(scope="session")
def base_prompt():
    return init_prompt(0)


_CRITERIA = []


@pytest.fixture
def criterion_log(capsys):
    def log(line):
        _CRITERIA.append(line)
        with capsys.disabled():
            print("\n" + line)
    return log


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
