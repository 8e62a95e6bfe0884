"""Koopman operator approximation by EDMD with a trainable network dictionary."""

from .dictionary import (
    AffineDictionary,
    HermiteDictionary,
    KsFourierDictionary,
    KsStateDerivDictionary,
    NetworkDictionary,
    NetworkParams,
    RbfDictionary,
    init_network_params,
    kmeans,
)
from .errors import (
    IntegrationError,
    InvalidInputError,
    KoopmanDLError,
    NonDiagonalizableError,
    NumericalError,
    TrainingDivergedError,
)
from .koopman import (
    KoopmanModel,
    SnapshotDataset,
    eigenfunction_values,
    fit_edmd,
    reconstruct,
)
from .metrics import (
    ErrorReport,
    averaged_reconstruction_error,
    eigenfunction_error,
    eigenfunction_errors,
    reconstruction_error,
)
from .numerics import eig_general, pseudo_inverse
from .systems import (
    DuffingParams,
    DuffingSystem,
    KsParams,
    KsSystem,
    duffing_flow,
    ks_integrate,
    make_duffing_dataset,
    make_ks_dataset,
)
from .trainer import TrainingConfig, TrainingHistory, fit_edmd_dl, gradient_check

__version__ = "0.1.0"
