import pytest

from evolgym.controller import local_client
from evolgym.envs import generate_instruction_set

DIFFICULTY = {"maze": 7, "wordle": 100, "craft": 3}


@pytest.fixture(scope="session")
def small_sets():
    """Small per-env instruction sets shared by controller and trainer tests."""
    return {env: generate_instruction_set(env, 40, 5, 10, seed=1, difficulty=d)
            for env, d in DIFFICULTY.items()}


@pytest.fixture
def client():
    return local_client(DIFFICULTY)


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
