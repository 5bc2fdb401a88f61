import os
import sys

import pytest

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

FIXTURES = os.path.join(os.path.dirname(__file__), 'fixtures')


@pytest.fixture
def fixture_path():
    def resolve(name: str) -> str:
        return os.path.join(FIXTURES, name)
    return resolve
