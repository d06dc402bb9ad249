import numpy as np
import pytest

from synthhand.kinematics import load_joint_space, parse_joint_definition


@pytest.fixture(scope="session")
def space():
    return load_joint_space()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_vectors(space, rng, n):
    return space.mins + (space.maxs - space.mins) * rng.random((n, len(space)))


@pytest.fixture(scope="session")
def one_joint_space():
    return parse_joint_definition(
        "name parent axis_x axis_y axis_z link_length min max\n"
        "lh_WRJ2 root 0 0 1 1.0 -1.0 1.0\n"
    )


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {number}. {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("] ")[1].split(".")[0])):
            terminalreporter.write_line(line)
