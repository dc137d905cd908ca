"""Anti-adversary defence layer, query-based attacks and query-complexity
checks on small numpy classifiers."""

from .anti_adversary import (
    AntiAdvConfig,
    AntiAdversaryClassifier,
    AntiAdvTrace,
    CoupledAntiAdversary,
    anti_forward,
    anti_single_gd,
    anti_single_stp,
    pseudo_label,
)
from .attacks import (
    AttackOutcome,
    AttackSpec,
    BudgetExhausted,
    QueryOracle,
    adaptive_transfer_attack,
    gradient_ascent_attack,
    nes_attack,
    pgd_attack,
    simba,
    stp_maximize,
)
from .classifier import (
    Dataset,
    TrainConfig,
    TrainingDiverged,
    evaluate,
    load_checkpoint,
    make_dataset,
    save_checkpoint,
    train_adversarial,
    train_nominal,
)
from .core_math import (
    MlpParams,
    NonFiniteError,
    ShapeError,
    init_mlp,
    input_gradient,
    loss_and_input_gradient,
    mlp_forward,
    softmax_ce,
)
from .theory import (
    RegimeError,
    SyntheticObjective,
    TheoryInputs,
    check_local_monotonicity,
    g_blackbox,
    g_whitebox,
    k_anti,
    k_anti_whitebox,
    k_base,
    k_base_whitebox,
    verify_iterate_identity,
)

__version__ = "0.1.0"
