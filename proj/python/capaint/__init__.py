"""Python bindings for the capaint library."""

from ._capaint import (
    COMMANDS,
    PREDICT_MODES,
    CapaintError,
    ConfigError,
    DimensionError,
    IndexError,
    IntegrityError,
    NoiseSchedule,
    NumericError,
    UsageError,
    causal_count,
    frame_sources,
    importance_scores,
    increase_percent,
    inpaint,
    inpaint_call_count,
    linear_schedule,
    mae,
    mse,
    partition,
    psnr,
    q_sample,
    reduction_percent,
    round_half_up,
    run_command,
    ssim,
)

__all__ = [name for name in dir() if not name.startswith("_")]
