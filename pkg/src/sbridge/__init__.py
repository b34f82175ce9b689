"""Exact Schrodinger-bridge machinery for finite state spaces and graphs.

Core layers:

- ``process``: noise schedules and the closed-form reference chain.
- ``bridge``: endpoint-conditioned kernels, rates, and path sampling.
- ``measures``: couplings, path measures, projections, exact grid KL.
- ``sinkhorn``: independent entropic-OT oracle for the endpoint problem.
- ``imf``: the iterated-projection solver with convergence diagnostics.
- ``graphs``: factorized node/edge process and tiny-space enumeration.
- ``qap``: NLL-cost graph matching (SM/MPM relaxations + Hungarian).
- ``tabular``: trained-predictor variant of the projection loop.
- ``cli``: config-driven batch front end (``sbridge`` command).
"""

from .bridge import JumpPath, PinnedKernel, pinned_kernel, pinned_rate, sample_bridge_path
from .exceptions import (
    CapExceededError,
    ConfigSchemaError,
    DegenerateBridgeError,
    InfiniteDivergenceError,
    InvalidParameterError,
    PositivityError,
    SBridgeError,
    SizeMismatchError,
    SupportViolationError,
    TimeOrderError,
)
from .graphs import (
    Assignment,
    FlatGraphSpace,
    GraphVocab,
    LabeledGraph,
    enumerate_graph_space,
    graph_kernel,
    pair_nll,
)
from .imf import ImfConfig, ImfSolver, ImfTrace, imf_diagnostics, run_imf
from .measures import (
    BackwardMarkovChainMeasure,
    Coupling,
    MarkovChainMeasure,
    ReciprocalMeasure,
    kl_couplings,
    kl_markov_paths,
    kl_reciprocal_to_markov,
    markov_projection,
    markov_projection_reverse,
    reciprocal_joint,
    reciprocal_projection,
)
from .process import (
    NoiseSchedule,
    Prior,
    ProductProcess,
    RateMatrix,
    ReferenceProcess,
    StateSpace,
    TransitionKernel,
    build_schedule,
    geometric_schedule,
    reference_kernel,
    reference_rate,
)
from .qap import (
    QapCost,
    QapMatcher,
    QapSolverConfig,
    TABLE6_SETTING,
    build_qap_cost,
    exhaustive_qap,
    ged_cost,
    solve_qap,
    verify_ged_nll_affinity,
)
from .sinkhorn import SinkhornSolver, eot_cost_matrix, static_sb_sinkhorn
from .tabular import (
    ApproxImfRecord,
    TabularBridgeLearner,
    TabularPredictor,
    TrainConfig,
    approximate_imf,
    backward_loss,
    exact_posterior_predictor,
    forward_loss,
    loss_floor,
    predictor_chain,
    predictor_rate,
    train,
)

__version__ = "0.1.0"
