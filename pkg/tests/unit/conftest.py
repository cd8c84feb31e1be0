import pytest

from phase_type import validate
from solver import RiskModel, SolverConfig, solve
from valuefn import Grid

TABLE1_T = [[-10.0, 5.0], [4.0, -12.0]]
TABLE1_PI = [0.4, 0.6]


@pytest.fixture
def table1_env():
    return validate(TABLE1_T, TABLE1_PI)


@pytest.fixture
def table1_model(table1_env):
    return RiskModel(c=15.0, delta=0.1, beta=1.0, env=table1_env)


@pytest.fixture(scope="session")
def coarse_table1():
    """Table 1 model solved on a coarse grid, shared by the slower unit tests."""
    model = RiskModel(c=15.0, delta=0.1, beta=1.0, env=validate(TABLE1_T, TABLE1_PI))
    return model, solve(model, SolverConfig(grid=Grid.from_spacing(0.01, 20.0)))
