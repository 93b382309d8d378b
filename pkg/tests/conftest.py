import os

import hypothesis
import numpy as np
import pytest

from vsct_spoter.pose_data import NUM_POINTS, Dataset, GlossVocabulary, PoseSequence

hypothesis.settings.register_profile("default", max_examples=50, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def random_sequence(rng, frames=5, gloss_id=0, p_absent=0.1, signer=0):
    pts = rng.uniform(50.0, 600.0, (frames, NUM_POINTS, 2))
    present = rng.random((frames, NUM_POINTS)) >= p_absent
    return PoseSequence(pts, present, gloss_id, signer_id=signer)


def toy_dataset(rng, counts, frames=4):
    vocab = GlossVocabulary(tuple(f"g{k}" for k in range(len(counts))))
    seqs = []
    for k, n in enumerate(counts):
        seqs += [random_sequence(rng, frames, k, signer=i) for i in range(n)]
    return Dataset(vocab, tuple(seqs))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# One line per acceptance criterion, collected by tests/test_acceptance.py
# and echoed at the end of the run regardless of output capturing.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
