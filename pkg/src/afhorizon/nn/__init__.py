from .network import (  # noqa: F401
    CLASS_INDEX,
    CLASS_ORDER,
    ClassProbs,
    ModelParams,
    NetConfig,
    forward,
    init_params,
    loss_and_grad,
    predict_proba,
)
from .optim import PlateauScheduler, adam_update  # noqa: F401
from .serialize import load_params, save_params  # noqa: F401
from .train import Dataset, EpochRecord, TrainConfig, evaluate_loss, train  # noqa: F401
