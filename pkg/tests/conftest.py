import math
import warnings

import numpy as np
import pytest

from lfecm.excitation import FcrConfig, NoiseConfig, fcr_power, generate, power_to_current, synth_frequency
from lfecm.ladder import CpeTriple, DecompositionConfig, decompose
from lfecm.model import build_discrete, default_cell, ocv_segment

TRUTH = CpeTriple(0.0014, 22281.0, 0.52)


@pytest.fixture(scope="session")
def cell():
    return default_cell()


@pytest.fixture(scope="session")
def short_drive(cell):
    """Half-hour droop-excitation current against the reference truth model."""
    freq = synth_frequency(1800.0, 1.0, seed=20260201)
    power = fcr_power(freq, FcrConfig(droop=400.0))
    cfg = DecompositionConfig(n_branches=100, f_max=1.0 / math.pi)
    net = decompose(TRUTH, cfg)
    seg = ocv_segment(cell, cell.soc0)
    model = build_discrete([TRUTH.r_sigma, net.r1, net.c1, net.a, net.b], net.n, net.r_inf, cell, seg, 1.0)
    x0 = np.zeros(net.n + 1)
    x0[net.n] = cell.soc0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return power_to_current(power, model, x0)


@pytest.fixture(scope="session")
def short_clean(cell, short_drive):
    cfg = DecompositionConfig(n_branches=100, f_max=1.0 / math.pi)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return generate(TRUTH, cfg, cell, short_drive, NoiseConfig(0.0, 0.0, seed=0)).clean
