"""Shared fixtures: completed benchmark runs are expensive enough that the
suite computes each once per session."""

import numpy as np
import pytest

from safeabs import acc_config, run, toy1d_config, toy2d_config


@pytest.fixture(scope="session")
def toy1d_run():
    return run(toy1d_config(seed=0))


@pytest.fixture(scope="session")
def toy2d_run():
    return run(toy2d_config(seed=0))


@pytest.fixture(scope="session")
def acc_run():
    return run(acc_config(seed=0))


def winning_counts(result):
    return [int(np.count_nonzero(w.mask)) for w in result.winning_sets]
