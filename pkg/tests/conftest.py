import numpy as np
import pytest

import kpm_sentinel.pipeline as pipeline_mod
import kpm_sentinel.shap as shap_mod
from kpm_sentinel.lstm import TrainConfig
from kpm_sentinel.synth import CorpusConfig, default_corpus

LOCAL_ACCURACY_TOL = 1e-6

# Every Kernel SHAP explanation built anywhere in the test session goes through
# this wrapper, which checks sum(phi) + base == f(x) and keeps the worst gap.
SHAP_AUDIT = {"count": 0, "max_gap": 0.0}
_original_kernel_shap = shap_mod.explain_kernel_shap


def _audited_kernel_shap(*args, **kwargs):
    expl = _original_kernel_shap(*args, **kwargs)
    gap = expl.local_accuracy_gap()
    SHAP_AUDIT["count"] += 1
    SHAP_AUDIT["max_gap"] = max(SHAP_AUDIT["max_gap"], gap)
    assert gap <= LOCAL_ACCURACY_TOL, f"local accuracy violated by {gap:.3g}"
    return expl


shap_mod.explain_kernel_shap = _audited_kernel_shap
pipeline_mod.explain_kernel_shap = _audited_kernel_shap


@pytest.fixture(scope="session")
def small_corpus():
    """Four days, nine UEs, 400 samples each: about 14k windows, fast to train on."""
    return default_corpus(CorpusConfig(days=4, ues=9, samples_per_ue=400, seed=3))


@pytest.fixture(scope="session")
def small_detector(small_corpus):
    cfg = TrainConfig(max_epochs=15, patience=3)
    return pipeline_mod.train_detector(small_corpus, window=3, ratio=0.3, seed=0, config=cfg,
                                       global_samples=10, n_coalitions=512,
                                       train_sample_size=2000)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# One line per acceptance criterion, repeated at the end of the pytest output.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
