from __future__ import annotations

import pytest

from bridgerag.gateway import MockGateway
from bridgerag.indexer import KnowledgeIndex, build_index
from bridgerag.model import IndexConfig

from fixture_data import AYLWIN_CORPUS, aylwin_script


@pytest.fixture()
def aylwin_gateway() -> MockGateway:
    return MockGateway.from_script(aylwin_script())


@pytest.fixture()
def aylwin_ircot_gateway() -> MockGateway:
    return MockGateway.from_script(aylwin_script(ircot=True))


@pytest.fixture()
def index_config() -> IndexConfig:
    return IndexConfig()


@pytest.fixture()
def aylwin_index(aylwin_gateway, index_config) -> KnowledgeIndex:
    return build_index(AYLWIN_CORPUS, index_config, aylwin_gateway)
