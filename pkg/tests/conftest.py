import os
import sys

import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from incremental_lpv.example import example_plant, standard_embedding, standard_scheduling  # noqa: E402
from incremental_lpv.genplant import (  # noqa: E402
    WeightingScheme,
    build_generalized_plant,
    generalized_lpv_model,
)
from incremental_lpv.synthesis import synthesize  # noqa: E402


@pytest.fixture(scope="session")
def weights():
    return WeightingScheme.defaults()


@pytest.fixture(scope="session")
def plant():
    return example_plant()


@pytest.fixture(scope="session")
def gp(plant, weights):
    return build_generalized_plant(plant, weights, validation_samples=512)


@pytest.fixture(scope="session")
def incremental_design(gp):
    """Certificate and controller of the incremental synthesis on the example."""
    return synthesize(gp.lpv, kind="incremental")


@pytest.fixture(scope="session")
def comparator_model(weights):
    return generalized_lpv_model(standard_embedding(), weights)


@pytest.fixture(scope="session")
def comparator_scheduling(gp):
    return gp.scheduling_map(standard_scheduling())


@pytest.fixture(scope="session")
def standard_design(comparator_model):
    return synthesize(comparator_model, kind="standard")
