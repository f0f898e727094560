"""Gaussian copula estimation with mixture marginals for incomplete data."""
from .copula import (ConditionalLaw, CopulaModel, conditional_law, impute, log_density,
                     precision_zeros, sample_conditional)
from .data import IncompleteDataset, read_csv, write_csv
from .ecm import (EcmConfig, EcmTrace, EStepStatistic, ThetaOptConfig, e_step, e_step_v,
                  run_ecm, sigma_update, theta_objective, theta_objective_grad, theta_update)
from .errors import (ConfigurationError, CopulaEMError, DomainError, IngestionError,
                     NumericalError)
from .kernels import BACKEND
from .marginals import (MixtureMarginal, gaussianize, init_from_observed, mix_cdf, mix_logpdf,
                        mix_pdf, mix_quantile)

__version__ = "0.1.0"
