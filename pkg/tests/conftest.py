import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from deepfacelift.data import SynthConfig  # noqa: E402
from deepfacelift.pipeline import ExperimentConfig  # noqa: E402

# small enough for a full cross-validated run in about a second
TINY_SYNTH = SynthConfig(persons=6, sequences_per_person=3, min_frames=4, max_frames=7, seed=3)
TINY = ExperimentConfig(synth=TINY_SYNTH, folds=3, hidden_sizes=(8, 6, 4, 6), epochs=3, batch_size=16,
                        gp_restarts=1, gp_max_iter=30, seed=11)


@pytest.fixture
def tiny_cfg():
    return TINY


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.format_result(number))
