"""Gradient-based system identification for modulation audio effects.

Trains a differentiable frequency-sampling model of a flanger, chorus or
phaser against reference input/output audio, renders the learned effect
with a zero-latency time-domain engine, and ships loss-surface analysis
tooling for the underlying phase-estimation problem.
"""

__version__ = "0.1.0"

from .diffmodel import (  # noqa: F401
    ChannelParams,
    CombParams,
    FeedbackConfig,
    LfoParams,
    ModelParams,
    SVFParams,
    Variant,
    fs_forward,
    init_params,
    load_params,
    save_params,
)
from .signals import (  # noqa: F401
    FramedInput,
    Kernel,
    build_training_input,
    frame_signal,
    gen_ap_chirp,
    gen_lin_chirp,
    gen_triangular,
)
from .spectral import FreqGrid  # noqa: F401
from .trainer import TrainConfig, multi_seed, train, validate  # noqa: F401
