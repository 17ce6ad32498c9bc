import numpy as np
import pytest

import mcnet
from mcnet.checks import TINY_MODEL
from mcnet.config import TrainConfig


#: Keys that shrink every run to the tiny 16x16 model
TINY_CONFIG = """\
# tiny model used by the command-line tests
model.frame_height = 16
model.frame_width = 16
model.content_widths = 4,8,8
model.motion_widths = 4,8,8
model.comb_widths = 8,4,8
model.disc_widths = 4,4
train.n_context = 2
train.t_train = 1
train.batch_size = 2
train.iterations = 2
train.checkpoint_interval = 1
train.progress = false
eval.steps = 2
data.height = 16
data.width = 16
data.count = 2
data.length = 6
"""


@pytest.fixture(autouse=True)
def add_mcnet(doctest_namespace):
    doctest_namespace["np"] = np
    doctest_namespace["mcnet"] = mcnet


@pytest.fixture
def tiny_model():
    """
    The smallest generator configuration: 16x16 frames, widths 4, 8, 8.

    :return: a model configuration
    :rtype: ModelConfig
    """
    return TINY_MODEL


@pytest.fixture
def tiny_train():
    """Two context frames, one predicted frame, batch of two."""
    return TrainConfig(
        n_context=2, t_train=1, batch_size=2, iterations=2, progress=False
    )


@pytest.fixture
def rng():
    return np.random.default_rng(7)


@pytest.fixture
def tiny_config_file(tmp_path):
    """Config file with :data:`TINY_CONFIG`; returns its path as a string."""
    path = tmp_path / "tiny.txt"
    path.write_text(TINY_CONFIG, encoding="utf-8")
    return str(path)
