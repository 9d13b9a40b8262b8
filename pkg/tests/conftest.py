import numpy as np
import pytest

from evclip.synth import SyntheticConfig, TeacherConfig, all_class_samples, gen_dataset, pretrain_teacher


@pytest.fixture(scope="session")
def fixture_cfg():
    """Reference fixture: 10 classes, 2 held out."""
    return SyntheticConfig(num_classes=10, samples_per_class=200, seed=0)


@pytest.fixture(scope="session")
def dataset(fixture_cfg):
    return gen_dataset(fixture_cfg)


@pytest.fixture(scope="session")
def teacher(fixture_cfg):
    """Trained once per session, then shared read-only like a downloaded checkpoint."""
    image, text = pretrain_teacher(all_class_samples(fixture_cfg), TeacherConfig(seed=0))
    return image, text


@pytest.fixture
def rng():
    return np.random.default_rng(1234)



def pytest_terminal_summary(terminalreporter):
    from acceptance_report import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
