import numpy as np
import pytest
import torch

from myoinr.synth import SynthConfig, generate_case


@pytest.fixture(scope="session")
def synth_case():
    return generate_case(11, SynthConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


def tiny_synth_config(**kw):
    from myoinr.synth import SynthConfig
    base = dict(image_size=32, frame_count=4, r_endo=(5.0, 6.0), wall=(3.0, 4.0), center_jitter=1.0,
                drift=0.5, rings=3, spokes=8)
    base.update(kw)
    return SynthConfig(**base)


@pytest.fixture(scope="session")
def tiny_dataset():
    from myoinr.synth import generate_dataset
    return generate_dataset(5, 4, tiny_synth_config())


@pytest.fixture
def tiny_train_config():
    from myoinr.diffnet import TINY_CONFIG
    from myoinr.train import TrainConfig
    return TrainConfig(epochs=2, batch_size=2, learning_rate=1e-3, model=TINY_CONFIG, omega=TINY_CONFIG.omega)
