import numpy as np
import pytest

from cavity_dynamics import CavityQedParams, tabulate_efficiency
from source_sim import ClickStream, ConfigBundle, PulseSchedule


@pytest.fixture(scope="session")
def params():
    return CavityQedParams()


@pytest.fixture(scope="session")
def table(params):
    """Efficiency table for the default cavity, shared by every simulation test."""
    return tabulate_efficiency(params, 65)


@pytest.fixture
def bundle():
    return ConfigBundle()


@pytest.fixture
def schedule():
    return PulseSchedule()


def make_stream(cycle_id, detector, timestamp_ns, n_cycles, schedule=None):
    """ClickStream from loose arrays, sorted the way the file format requires."""
    schedule = schedule or PulseSchedule()
    cycle_id = np.asarray(cycle_id, dtype=np.int64)
    detector = np.asarray(detector, dtype=np.int8)
    timestamp_ns = np.asarray(timestamp_ns, dtype=np.int64)
    order = np.lexsort((detector, timestamp_ns, cycle_id))
    return ClickStream(cycle_id[order], detector[order], timestamp_ns[order], n_cycles, schedule)


def poisson_stream(rng, clicks_per_detector, n_cycles, schedule=None):
    """Two independent homogeneous streams with a fixed number of clicks per cycle and detector."""
    schedule = schedule or PulseSchedule()
    cycles, detectors, stamps = [], [], []
    for c in range(n_cycles):
        for det in (1, 2):
            stamps.append(rng.integers(0, schedule.cycle_window_ns, clicks_per_detector))
            cycles.append(np.full(clicks_per_detector, c))
            detectors.append(np.full(clicks_per_detector, det))
    return make_stream(np.concatenate(cycles), np.concatenate(detectors), np.concatenate(stamps),
                       n_cycles, schedule)
