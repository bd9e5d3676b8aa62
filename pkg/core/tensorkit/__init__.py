from core.tensorkit.tensor import Tape, TapeEntry, Tensor, backward, parameter_digest, zero_grad
from core.tensorkit.optim import OptState, adamw_step, clip_grad_norm, warmup_lr
from core.tensorkit.gradcheck import GradCheckReport, grad_check
from core.tensorkit.rng import derive_seed, make_rng

__all__ = [
    "Tape", "TapeEntry", "Tensor", "backward", "parameter_digest", "zero_grad",
    "OptState", "adamw_step", "clip_grad_norm", "warmup_lr",
    "GradCheckReport", "grad_check",
    "derive_seed", "make_rng",
]
