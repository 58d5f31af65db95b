"""Weighted-indexed semi-Markov models of high-frequency returns."""
from .errors import *  # noqa: F401,F403
from .estimation import (FollowerKernel, estimate_follower, estimate_kernel,
                         query_with_fallback)
from .index_process import (IndexBins, IndexPath, IndexSpec, delta_u, ewma_f, fit_index_bins,
                            index_at_minutes, index_at_transitions, index_path)
from .market_data import (BinSpec, PriceSeries, ReturnSeries, StatePath, TickSeries,
                          compute_returns, discretize, fit_return_bins, resample_to_grid,
                          state_sign)
from .semimarkov import (BackwardState, IndexedKernel, OneStepDist, conditional_g, embedded_p,
                         kernel_increment, one_step_probs, sojourn_cdf)
from .simulation import (BivariatePath, SimConfig, paths_to_returns, simulate_bivariate,
                         simulate_event, simulate_stepwise)
from .statistics import (AcfReport, CrossCorrMatrix, acf_returns, acf_squared, corr_matrix,
                         cross_correlation, reproduction_ratio)

__version__ = "0.1.0"
