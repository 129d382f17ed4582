from .layers import (LayerSpec, ModelSpec, SpecError, count_parameters, conv2d, dense, flatten, mlp,
                     policy_head, relu, residual_block, softmax_xent, value_head)
from .model import Forward, StaleActivationsError, backward, backward_range, evaluate_loss, forward, forward_range
from .optim import ALEXNET_SCHEDULE, LrSchedule, NonFiniteError, OptimizerState, halve_schedule, lr_at, sgd_step
from .overparam import build_overparam, scale_widths, transfer_params
from .params import ParamStore, PartitionSpec, init_params, partition_mask, reinitialize
