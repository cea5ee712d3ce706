"""Two-teacher co-teaching distillation for domain expansion, desk scale.

The package is organized as a small numpy library:

* ``tensor``     - tape-based reverse-mode autodiff with a gradient-check oracle
* ``rng``        - seeded tagged streams; Beta/Gamma sampling
* ``data``       - synthetic source/target domain pairs with an exact Bayes oracle
* ``models``     - MLP classifiers with exposed penultimate features; checkpoints
* ``train``      - teacher training (supervised, MMD-aligned) and the four
                   distillation schemes
* ``evaluation`` - domain/expanded accuracy, consistency split, ambiguity
                   rates, gamma sweep
* ``cli``        - ``coteach`` command: gen / pipeline / ablate-gamma / report
"""

from .data import (
    DomainPairDataset,
    DomainShiftConfig,
    Sample,
    bayes_oracle_accuracy,
    generate_domain_pair,
    load_dataset,
    save_dataset,
)
from .evaluation import (
    AmbiguityMatrix,
    ConsistencySplit,
    EvalReport,
    accuracy,
    ambiguity_matrix,
    ambiguity_rate,
    consistency_split,
    evaluate_ude,
    gamma_ablation,
    group_accuracy,
)
from .models import (
    MlpClassifier,
    forward,
    init_mlp,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from .rng import BetaParams, SeededRng, sample_beta, sample_gamma, sample_uniform
from .tensor import (
    Tape,
    Tensor,
    backward,
    grad_check,
    kl_div,
    log_softmax,
    mmd2_rbf,
    reduce_mean,
    sgd_step,
)
from .train import (
    TeacherPair,
    TrainConfig,
    TrainLog,
    cross_entropy,
    ct_distill,
    kdct_batch_loss,
    kdde_distill,
    make_teacher_pair,
    mict_batch_loss,
    multit_distill,
    train_source,
    train_uda_mmd,
)

__version__ = "0.1.0"
