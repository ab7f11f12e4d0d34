"""Simulation, counting, estimation, and training tools for single-spike
nLIF networks organised around their causal pieces."""

__version__ = "0.1.0"

from .core import (
    BatchTrace,
    DimensionError,
    InputError,
    NetworkParams,
    NetworkTrace,
    NeuronTrace,
    Topology,
    WeightStack,
    forward_batch,
    forward_network,
    integrate_oracle,
    membrane_potential,
    solve_neuron,
)
from .data import (
    CLASS_NAMES,
    DOT,
    GridConfig,
    ParseError,
    Sample,
    YANG,
    YIN,
    YinYangConfig,
    classify,
    encode_features,
    generate_yinyang,
    load_idx,
    read_yinyang_csv,
    stack_features,
    write_yinyang_csv,
    yinyang_grid,
)
from .estimation import (
    FAMILIES,
    OPTIMIZED_COEFFS,
    DistributionSpec,
    EstimateResult,
    PqkProfile,
    SweepResult,
    deep_upper_bound,
    eta_from_pqk,
    first_passage_probability,
    grid_sweep,
    monte_carlo_pqk,
    pqk_from_weight_vector,
    sparre_andersen_bound,
    survival_probability,
)
from .evolution import (
    Candidate,
    EvoConfig,
    default_probe,
    evolve,
    fitness,
    perturb_coeffs,
)
from .pieces import (
    CausalPath,
    PieceIds,
    PieceTable,
    SetSizeStats,
    assign_layer_piece_ids,
    assign_neuron_piece_ids,
    causal_path,
    count_network_pieces,
    count_pieces,
    encode_piece_key,
    set_size_stats,
)
from .training import (
    AdamState,
    DivergenceError,
    GradientBuffers,
    Metrics,
    TrainConfig,
    TrainResult,
    accuracy,
    backward_batch,
    backward_network,
    clamp_positive,
    initialize_weights,
    linear_head,
    load_checkpoint,
    predict_batch,
    save_checkpoint,
    softmax_xent,
    train,
    ttfs_loss,
)

__all__ = [
    "__version__",
    "AdamState",
    "BatchTrace",
    "CLASS_NAMES",
    "Candidate",
    "CausalPath",
    "DOT",
    "DimensionError",
    "DistributionSpec",
    "DivergenceError",
    "EstimateResult",
    "EvoConfig",
    "FAMILIES",
    "GradientBuffers",
    "GridConfig",
    "InputError",
    "Metrics",
    "NetworkParams",
    "NetworkTrace",
    "NeuronTrace",
    "OPTIMIZED_COEFFS",
    "ParseError",
    "PieceIds",
    "PieceTable",
    "PqkProfile",
    "Sample",
    "SetSizeStats",
    "SweepResult",
    "Topology",
    "TrainConfig",
    "TrainResult",
    "WeightStack",
    "YANG",
    "YIN",
    "YinYangConfig",
    "accuracy",
    "assign_layer_piece_ids",
    "assign_neuron_piece_ids",
    "backward_batch",
    "backward_network",
    "causal_path",
    "clamp_positive",
    "classify",
    "count_network_pieces",
    "count_pieces",
    "deep_upper_bound",
    "default_probe",
    "encode_features",
    "encode_piece_key",
    "eta_from_pqk",
    "evolve",
    "first_passage_probability",
    "fitness",
    "forward_batch",
    "forward_network",
    "generate_yinyang",
    "grid_sweep",
    "initialize_weights",
    "integrate_oracle",
    "linear_head",
    "load_checkpoint",
    "load_idx",
    "membrane_potential",
    "monte_carlo_pqk",
    "perturb_coeffs",
    "pqk_from_weight_vector",
    "predict_batch",
    "read_yinyang_csv",
    "save_checkpoint",
    "set_size_stats",
    "softmax_xent",
    "solve_neuron",
    "sparre_andersen_bound",
    "stack_features",
    "survival_probability",
    "train",
    "ttfs_loss",
    "write_yinyang_csv",
    "yinyang_grid",
]
