from pathlib import Path

import pytest

from ehrembed.benchmark import make_hospital_pair
from ehrembed.trainer import Hyper

FIXTURES = Path(__file__).parent / "fixtures"

# small widths keep the suite fast; nothing under test depends on size
TINY_HYPER = Hyper(dropout=0.1, embed_dim=16, hidden_dim=32, value_dim=4, lr=2e-3,
                   batch_size=32, max_epochs=8, patience=8, w2v_steps=60)


@pytest.fixture(scope="session")
def hospital_pair(tmp_path_factory):
    """Two small schema-incompatible hospitals with a planted signal."""
    work = tmp_path_factory.mktemp("pair")
    return make_hospital_pair(work, patients=400, concepts=40, data_seed=7,
                              events_per_stay=(8, 24))


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES
