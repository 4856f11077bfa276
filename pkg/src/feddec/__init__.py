"""Semi-decentralized federated learning simulator (FedDec and FedAvg)."""
from .algorithms import RunConfig, RunTrace, run
from .graphs import Graph, generate_geographic, generate_random, is_connected, laplacian
from .mixing import MixingModel, SpectralReport, alpha_of, build_weights, lambda2_hat, sample_mixing, validate
from .problem import RegressionProblem, constants, generate_synthetic

__version__ = "0.1.0"
