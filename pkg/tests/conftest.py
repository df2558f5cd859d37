import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from synthbrain.phantom import make_phantom_corpus
from synthbrain.schema import default_schema

from toybundle import build_toy_assets


@pytest.fixture(scope="session")
def schema():
    return default_schema()


@pytest.fixture(scope="session")
def phantom_maps():
    return make_phantom_corpus(7, 4)


@pytest.fixture(scope="session")
def toy_assets():
    """Trained toy bundle (slow: trains five networks on first use).

    Set SYNTHBRAIN_TEST_CACHE to a directory to reuse a previous build
    during development.
    """
    cache = os.environ.get("SYNTHBRAIN_TEST_CACHE") or None
    if cache:
        os.makedirs(cache, exist_ok=True)
    return build_toy_assets(cache_dir=cache, report=print)
