"""Shared fixtures: one small synthetic task reused across test modules."""

import pytest

from tipcache import synth_generate


@pytest.fixture(scope="session")
def small_task():
    """5 classes, 4 shots, 20 test rows per class, dim 16."""
    return synth_generate(5, 4, 20, 16, 0.3, 0.4, 0)


@pytest.fixture(scope="session")
def main_task():
    """The full-size synthetic task used by the end-to-end checks."""
    return synth_generate(10, 16, 50, 32, 0.3, 0.4, 0)
