from .tensor import (NonFiniteError, ShapeError, Tape, Tensor, add, clip, concat,
                     cross_entropy, elementwise_mul, exp, gru, linear, matmul, mul,
                     scale, sigmoid, slice_cols, slice_rows, square, sub, sum_all,
                     sum_rows, tanh)
from .layers import (GRUCell, Linear, Module, forward_kinematics, gaussian_kl,
                     gru_step, reparameterize)
from .optim import AdamState, adam_step
from .gradcheck import GradCheckReport, grad_check
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
