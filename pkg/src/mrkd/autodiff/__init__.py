from .functional import batch_norm, conv2d, global_avg_pool, linear, max_pool2d, relu, residual_add
from .losses import KLDirection, LossValues, cross_entropy, distillation_loss, kl_to_teacher, soften
from .mixup import MixedBatch, mixup, one_hot
from .optim import SGD, OptimizerState, cosine_lr, sgd_step
from .tensor import Parameter, Tensor, no_grad

__all__ = [
    "KLDirection",
    "LossValues",
    "MixedBatch",
    "OptimizerState",
    "Parameter",
    "SGD",
    "Tensor",
    "batch_norm",
    "conv2d",
    "cosine_lr",
    "cross_entropy",
    "distillation_loss",
    "global_avg_pool",
    "kl_to_teacher",
    "linear",
    "max_pool2d",
    "mixup",
    "no_grad",
    "one_hot",
    "relu",
    "residual_add",
    "sgd_step",
    "soften",
]
