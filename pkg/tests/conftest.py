"""Session-scoped trained-model fixtures.

Training the toy models takes tens of minutes on one CPU, so the artifacts
are cached under tests/.cache (override with SKETCHFIELD_TEST_CACHE) and
reused across runs. Delete the cache directory to retrain from scratch.
"""

import pytest

import helpers


def pytest_terminal_summary(terminalreporter):
    """Echo acceptance verdicts after the run so they survive capture."""
    if helpers.ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in helpers.ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def toy_dataset():
    return helpers.ensure_dataset()


@pytest.fixture(scope="session")
def trained_generator():
    """(net, schedule, meta) for the distance-field-trained generator."""
    return helpers.ensure_generator("udf")


@pytest.fixture(scope="session")
def trained_binary_generator():
    """Identically configured generator trained on two-level fields."""
    return helpers.ensure_generator("binary")


@pytest.fixture(scope="session")
def trained_mask_head():
    return helpers.ensure_mask_head()


@pytest.fixture(scope="session")
def trained_decoder():
    return helpers.ensure_decoder()


@pytest.fixture(scope="session")
def trained_robust_decoder():
    """96x96 decoder trained with input-noise augmentation; used for the
    noisy-field comparison where threshold decoding visibly fragments."""
    return helpers.ensure_robust_decoder()
