from __future__ import annotations

import numpy as np
import pytest

from curverouter.core import BudgetGrid, ModelSpec, split_dataset
from curverouter.predictors import TrainConfig, train_mlp_bank
from curverouter.synth import SyntheticModelProfile, SyntheticScenario, generate

from helpers import saturating_scenario


@pytest.fixture(scope="session")
def small_scenario() -> SyntheticScenario:
    rng = np.random.default_rng(11)
    profiles = (
        SyntheticModelProfile(
            spec=ModelSpec("alpha", 0.40, 1.60),
            ceiling=0.92, halflife=120.0, skill_vector=rng.normal(0, 0.5, 6),
            compliance_reliability=0.95,
        ),
        SyntheticModelProfile(
            spec=ModelSpec("beta", 0.02, 0.08),
            ceiling=0.55, halflife=380.0, skill_vector=rng.normal(0, 0.5, 6),
            compliance_reliability=0.65,
        ),
    )
    return SyntheticScenario(
        profiles=profiles,
        grid=BudgetGrid(anchors=(25, 100, 400, 1600), default_cap=4000),
        n_queries=80,
        embedding_dim=12,
        seed=5,
        noise_sd=0.0,
        input_tokens=150,
    )


@pytest.fixture(scope="session")
def small_dataset(small_scenario):
    return generate(small_scenario)


@pytest.fixture(scope="session")
def small_split(small_dataset):
    return split_dataset(small_dataset, test_fraction=0.25, seed=3)


@pytest.fixture(scope="session")
def small_model(small_split):
    train, _ = small_split
    return train_mlp_bank(train, TrainConfig(epochs=25, learning_rate=1e-3, batch_size=16, seed=1))


@pytest.fixture(scope="session")
def medium_scenario():
    return saturating_scenario(seed=0, n_queries=240, embedding_dim=16)


@pytest.fixture(scope="session")
def medium_dataset(medium_scenario):
    return generate(medium_scenario)
