import os

# in-memory ledger and in-process Celery for every test
os.environ.setdefault("FIEDLER_DATABASE_URL", "sqlite://")
os.environ.setdefault("FIEDLER_CELERY_ALWAYS_EAGER", "true")

import numpy as np
import pytest
from sqlalchemy.orm import sessionmaker

from fiedlernet.core.graph import WeightedGraph
from fiedlernet.database.database import Base, make_engine
from fiedlernet.services.network import MlpModel, init_model

from graph_factories import complete_graph, path_graph, random_connected_graph


@pytest.fixture
def k2():
    return WeightedGraph.from_edges(2, [(0, 1, 3.0)])


@pytest.fixture
def p3():
    return path_graph(3)


@pytest.fixture
def p4():
    return path_graph(4)


@pytest.fixture
def k4():
    return complete_graph(4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def graph_factory():
    return random_connected_graph


@pytest.fixture
def tiny_model():
    return init_model([3, 4, 2], activation="tanh", seed=7)


@pytest.fixture
def single_layer_model():
    return MlpModel(layer_dims=(2, 1), weights=[np.array([[2.0, -3.0]])])


@pytest.fixture
def ledger_session():
    """Session factory over a fresh in-memory ledger"""
    from fiedlernet.database import models  # noqa: F401

    engine = make_engine("sqlite://")
    Base.metadata.create_all(bind=engine)
    factory = sessionmaker(autocommit=False, autoflush=False, bind=engine)
    yield factory
    engine.dispose()
