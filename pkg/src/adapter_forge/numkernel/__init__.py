"""Parameter registry, transformer kernels, optimizer and schedule."""
from .gradcheck import GradReport, grad_check
from .layers import (
    FULL_STACK,
    UNINITIALISED,
    Conv1d,
    EncoderStack,
    EncoderStackConfig,
    Linear,
    LayerNorm,
    build_encoder_stack,
    conv1d_forward,
    encoder_forward,
    make_generator,
    padding_mask,
    sinusoidal_positions,
)
from .optim import DESK_SCHEDULE, FULL_SCHEDULE, AdamWState, ScheduleConfig, adamw_step, lr_at_step
from .params import Entry, ParamStore, load_checkpoint, save_checkpoint


def count_params(store: ParamStore, prefix: str = "", trainable_only: bool = False) -> int:
    return store.count(prefix, trainable_only)


__all__ = [
    "FULL_SCHEDULE", "DESK_SCHEDULE", "FULL_STACK", "UNINITIALISED", "AdamWState", "Conv1d", "EncoderStack",
    "EncoderStackConfig", "Entry", "GradReport", "LayerNorm", "Linear", "ParamStore", "ScheduleConfig",
    "adamw_step", "build_encoder_stack", "conv1d_forward", "count_params", "encoder_forward",
    "grad_check", "load_checkpoint", "lr_at_step", "make_generator", "padding_mask",
    "save_checkpoint", "sinusoidal_positions",
]
