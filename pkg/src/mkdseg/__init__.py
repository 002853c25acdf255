"""Cross-modality segmentation at desk scale: adversarial image alignment,
mutual knowledge distillation between two segmentors, and a phantom-based
evaluation harness."""

from .errors import (
    CheckpointError,
    ConfigError,
    FormatError,
    InputError,
    MkdsegError,
    TrainingDiverged,
    UsageError,
)
from .evaluation import (
    DiceReport,
    ExperimentData,
    dice_coefficient,
    ensemble_predict,
    evaluate_model,
    run_ablation,
    run_assistant_sweep,
)
from .losses import (
    LossReport,
    adversarial_loss,
    cross_entropy,
    cycle_loss,
    generator_objective,
    kd_loss,
    segmentor_objective,
    soft_dice_loss,
    supervised_loss,
)
from .networks import (
    NetworkHandle,
    NetworkSpec,
    build_network,
    discriminate,
    load_network,
    save_network,
    segment,
    translate,
)
from .phantoms import (
    Dataset,
    LabeledSample,
    PhantomSpec,
    augment_sample,
    default_spec,
    make_dataset,
    synthesize_sample,
)
from .storage import read_dataset, write_dataset
from .training import (
    TrainerState,
    TrainingConfig,
    checkpoint_load,
    checkpoint_save,
    decay_segmentor_lr,
    run_training,
    train_iteration,
)

__version__ = "0.1.0"
