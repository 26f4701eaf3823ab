"""Energy-regularized multi-prompt learning over two-tower embeddings."""

from .contrastive import (
    PromptBatch,
    SimConfig,
    class_scores,
    cross_entropy,
    cross_entropy_grads,
    log_predict_multi,
    predict_multi,
    predict_single,
)
from .encoders import (
    ModelParams,
    PromptTemplate,
    Vocabulary,
    encode_class_prompts,
    encode_image,
    encode_prompt,
    init_params,
    param_grads,
)
from .energy import (
    ChainState,
    SgldConfig,
    energy,
    energy_and_grads,
    init_chain,
    run_chain,
    run_chains,
    sample_prompt_batch,
    sample_task_chains,
    sgld_step,
    task_view,
)
from .errors import (
    ConfigError,
    DegenerateInputError,
    DivergenceError,
    EmplError,
    FormatError,
    NumericalError,
    ShapeError,
    TaskError,
    UnknownClassError,
)
from .gaps import (
    density_energy_correlation,
    gap_certificate,
    grid_energy,
    harmonic_mean,
    mean_gap,
    pair_gaps,
    representation_discriminant,
    translate_representation,
)
from .meta import EvalResult, LabeledSet, TrainConfig, TrainResult, evaluate, train
from .synth import SynthSpec, cluster_means, generate, toy_benchmark
from .persistence import (
    DEFAULTS,
    EmbeddingDump,
    ExperimentConfig,
    default_sgld_config,
    default_sim_config,
    default_train_config,
    load_checkpoint,
    load_config,
    read_dump,
    save_checkpoint,
    write_dump,
)
from .tasks import TaskSpec, holdout_task, make_task

__version__ = "0.1.0"
