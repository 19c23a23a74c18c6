from pathlib import Path

import numpy as np
import pytest

import bicomb
from bicomb.combmodel import CombSpec
from bicomb.histogram import DetectorSpec


@pytest.fixture
def root():
    """Set up project root directory."""
    return Path(bicomb.__file__).parent.parent


@pytest.fixture
def example_config(root):
    """Find the example run even when current working dir is 'tests'."""
    return root / "bicomb/resources/example-run.yaml"


@pytest.fixture
def singly_comb():
    """Singly resonant comb of the 1580 nm filter window."""
    return CombSpec(fsr=3.5e9, gamma_s=np.pi * 126e6, idler_unconfined=True)


@pytest.fixture
def doubly_comb():
    return CombSpec(fsr=3.5e9, gamma_s=np.pi * 126e6, gamma_i=np.pi * 300e6)


@pytest.fixture
def cross_detector():
    return DetectorSpec(
        jitter_sigma=30e-12, bin_width=4e-12, window=(-2.5e-9, 1e-9),
        total_counts=1e5,
    )


@pytest.fixture
def auto_detector():
    return DetectorSpec(
        jitter_sigma=30e-12, bin_width=40e-12, window=(-15e-9, 15e-9),
        total_counts=1e6,
    )
