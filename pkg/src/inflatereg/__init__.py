"""Monte Carlo and closed-form tools for inflated minimum-norm interpolation."""
from .estimators import (EstimateVector, GramFactor, data_split, estimate_c_star,
                         gram_factorize, inflate, min_norm, ridge, shrink_toward,
                         unbiased_attempt)
from .risk import (RiskCurve, RiskSummary, empirical_c_opt, excess_risk, inflation_curve,
                   mc_risk_summary, ridge_curve, risk_derivative_at_zero)
from .sampling import (BetaCoefficients, DesignSample, NoiseModel, make_beta_custom,
                       make_beta_topk, replicate_stream, sample_design, snr)
from .spectrum import (AssumptionSet, Spectrum, check_assumptions, functionals,
                       make_block_spectrum, make_isotropic_spectrum, make_power_law_spectrum,
                       make_shrink_adversary_spectrum, make_spiked_spectrum,
                       make_two_regime_spectrum)
from .theory import (BoundInterval, TheoryPrediction, c_opt_prediction, multiplicative_alpha,
                     noise_term_bounds, proj_sigma_proj_bounds, projection_diag_bounds,
                     quadratic_form_moments, sigma2_functional_mc, trace_inverse_bounds)

__version__ = "0.1.0"
