"""Sparse vector autoregression (LASSO + least-squares refit) and frequency-domain connectivity."""

__version__ = "0.1.0"

from .connectivity import (CANONICAL_BANDS, Band, FrequencyGrid, PdcMatrix, SpectralMatrix, band_pdc,
                           coherence, partial_coherence, pdc, spectral_density, transfer_function)
from .errors import DataError, NumericalError, SparseVarError
from .estimators import (CvReport, FitResult, build_problem, cross_validate, fit, fit_lasso, fit_lassle,
                         fit_lse, lambda_grid, lasso_path, select_lambda)
from .inference import BootstrapEnsemble, KsTestResult, block_permutation_test, bootstrap, empirical_ci, ks_statistic
from .io import EpochDataset, RunConfig, load_config, read_epochs, write_epochs, write_results
from .model import NetworkSpec, NoiseSpec, VarModel, check_stationarity, generate_network, simulate
from .pipeline import compare_methods, fit_var
from .preprocess import acf, diagnose, difference, pacf
from .selection import OrderSelectionReport, select_order
