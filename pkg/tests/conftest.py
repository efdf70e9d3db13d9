import numpy as np
import pytest
import torch

from ritp.synthetic import generate_synthetic_scenario
from ritp.windows import build_map_tensors, build_scene_window

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def follow_scenario():
    return generate_synthetic_scenario("straight_follow", 0)


@pytest.fixture(scope="session")
def follow_window(follow_scenario):
    return build_scene_window(follow_scenario, 20, 10,
                              map_tensors=build_map_tensors(follow_scenario))
