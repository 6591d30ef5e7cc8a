"""
Shared pytest configuration.
"""


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long oracle and convergence runs (deselect with -m 'not slow')")
