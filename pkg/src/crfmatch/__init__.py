"""Map matching of sparse GPS trajectories with a linear-chain CRF over
alternating point/path states, trained with l1 or l2 regularization."""

from .crf import compute_potentials, forward_backward, viterbi_decode
from .evaluation import EvalReport, FeatureReport, MatchedRoute, evaluate_matching, feature_report
from .features import FeatureRegistry, build_registry
from .lattice import Lattice, LatticeConfig, build_lattice, label_lattice
from .road_network import RoadNetwork, load_network
from .trajectory import GroundTruth, GpsObservation, Trajectory, degrade_sampling, load_trajectories
from .training import (
    Model,
    TrainOptions,
    compute_lambda_max,
    load_model,
    regularization_sweep,
    save_model,
    train_l1,
    train_l2,
)

__version__ = "0.1.0"
