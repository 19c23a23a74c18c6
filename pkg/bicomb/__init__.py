__version__ = '0.1.0'

from .combmodel import CombSpec, PumpRegime, Regime, classify_regime
from .correlation import (
    AutoCorrelationResult, CrossCorrelationModel, cross_multi, cross_single,
    cross_sum, delta_g2_closed_form, estimate_mode_count, g2_auto
)
from .fitting import FitProblem, FitResult, derive_cavity_report, fit
from .histogram import (
    DetectorSpec, Histogram, mode_count, synthesize_auto, synthesize_cross
)
from .sagnac import DensityMatrix, SagnacSpec, postselected_state
from .tables import build_table_s1, cavity_table
from .tomography import TomographyRecord, mle_reconstruct, simulate_counts
