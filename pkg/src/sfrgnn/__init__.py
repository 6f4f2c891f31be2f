"""Robust GNN training via attribute pretraining + structure fine-tuning,
with structural poisoning attacks and a seeded benchmark harness."""

from .attacks import (
    PerturbationPlan,
    apply_perturbation,
    dice_attack,
    load_plan,
    perturbation_stats,
    random_flip_attack,
    save_plan,
    sgc_gradient_attack,
)
from .bench import (
    ExperimentSpec,
    MetricsReport,
    bench_timing,
    emit_report,
    paired_effect_probe,
    run_experiment,
)
from .errors import (
    AugmentationError,
    CapacityError,
    DatasetFormatError,
    NumericError,
    SfrError,
    ValidationError,
)
from .graph import (
    CsrAdjacency,
    Graph,
    GraphStats,
    SplitMasks,
    graph_stats,
    load_graph,
    make_split,
    normalize_adjacency,
    write_graph,
)
from .nn import (
    AdamState,
    ModelParams,
    adam_step,
    check_gradients,
    gcn_backward,
    gcn_forward,
    infonce_loss,
    nll_loss,
    spmm,
)
from .rng import RngState, derive_trial_seed
from .trainer import (
    AugmentedFeatures,
    TrainConfig,
    TrainedModel,
    finetune,
    internaa,
    jaccard_prune,
    predict,
    pretrain,
    train,
)

__version__ = "0.1.0"
