import sys
import os
import pytest
import torch

# Add project root directory to PYTHON PATH
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end benchmark runs (deselect with -m 'not slow')")


# Single-threaded torch keeps every run bitwise reproducible
@pytest.fixture(autouse=True, scope="session")
def single_thread_torch():
    """
    Fixture pinning torch to one intra-op thread for the whole session.
    """
    torch.set_num_threads(1)
    yield
