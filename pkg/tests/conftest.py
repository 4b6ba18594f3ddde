import numpy as np
import pytest
from django.conf import settings

from trimask.testing import toy_vocab


def pytest_configure():
    settings.configure(
        INSTALLED_APPS=["trimask"],
        DENOISERS={},
        TRIMASK_VOCAB={"text": 4, "image": 3, "audio": 3},
        USE_TZ=True,
    )


@pytest.fixture
def vocab():
    """
    The vocabulary the test settings configure.
    """
    return toy_vocab(4, 3, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
