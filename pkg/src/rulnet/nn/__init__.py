from .model import (
    ForwardTrace,
    ModelConfig,
    ModelParams,
    apply_moving_stats,
    init_params,
    l2_penalty,
    load_checkpoint,
    model_backward,
    model_forward,
    predict,
    save_checkpoint,
)
