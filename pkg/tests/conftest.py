import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from profile_rpca import synth

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def part1_hole():
    """Mid-range hole on the Part1 preset, 100k points."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return synth.generate_sample("part1", "hole", 0, midrange=True)


def brute_nearest(query, reference):
    """Exhaustive nearest index, lowest index on ties."""
    d2 = ((query[:, None, :] - reference[None, :, :]) ** 2).sum(axis=-1)
    return np.argmin(d2, axis=1)


@pytest.fixture(scope="session")
def part2_ablation():
    """DICE of the four ablation rows on the Part2 mid-range hole fixture."""
    from profile_rpca.pipeline import ABLATION_GRID, PipelineConfig, detect_cloud

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cloud = synth.generate_sample("part2", "hole", 0, midrange=True)
        out = {}
        for name, opr, cs in ABLATION_GRID:
            cfg = PipelineConfig(c=synth.PRESET_CLUSTERS["part2"], enable_opr=opr, enable_cs=cs)
            out[name] = detect_cloud(cloud, cfg).metrics["dice"]
    return out
