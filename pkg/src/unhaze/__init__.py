"""Single-image dehazing: compact encoder-decoder network with adaptive
mixup fusion, deformable feature enhancement, and contrastive
regularization against hazy inputs."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import (DataConfig, ExtractorConfig, LossConfig, NetworkConfig,
                     RunConfig, TrainConfig, load_run_config)
from .contrast import (ContrastSample, FeatureExtractor, cr_term,
                       extract_features, identity_extractor,
                       load_pretrained_extractor, random_extractor,
                       sample_contrast, total_loss)
from .data import (HazeParams, ImagePair, generate_synthetic_set, load_image,
                   load_paired_dataset, random_crop_flip, save_image,
                   synthesize_haze)
from .deform import DeformConv2d, DfeModule, bilinear_sample, deformable_conv_forward
from .errors import (ConfigError, FormatError, IngestionError, InputError,
                     TrainingError, UnhazeError)
from .metrics import MetricReport, evaluate_dirs, psnr, ssim
from .network import (DehazeNet, FaBlock, adaptive_mixup, count_parameters,
                      make_network, parameter_breakdown)
from .train import AdamState, adam_step, cosine_lr, train

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
