"""
mcnet: motion-content network for video frame prediction.

A small reverse-mode differentiation engine on numpy, the MCnet generator
with its adversarial discriminator, synthetic training clips, and the
PSNR/SSIM evaluation protocol.
"""

from .autodiff import Graph, backward, inject_sign_fault
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import (
    DataConfig,
    EvalConfig,
    LossConfig,
    ModelConfig,
    Settings,
    TrainConfig,
    dump_config,
    load_config,
)
from .errors import (
    CheckpointError,
    ConfigError,
    ConfigMismatchError,
    GradCheckFailure,
    MCNetError,
    NonFiniteError,
    SceneError,
    ShapeError,
    TrainingDivergedError,
    UsageError,
)
from .evaluation import (
    copy_last_baseline,
    decile_report,
    evaluate,
    masked_metrics,
    metric_curve,
    psnr,
    ssim,
)
from .gradcheck import GradCheckReport, grad_check
from .model import (
    build_convlstm_baseline,
    build_discriminator,
    build_generator,
    predict_frames,
    predict_sequence,
)
from .tensor import Tensor
from .trainer import Trainer, train
from .video import SceneSpec, VideoClip, generate_clip, normalize, denormalize
from .__about__ import (
    __version__,
    __author__,
    __description__,
    CHECKPOINT_FORMAT_VERSION,
)
