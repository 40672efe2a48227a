"""Text-driven video style transfer with a state-space fusion module."""

from .tensor import Tensor, backward, finite_diff_check
from .ssm import FusionParams, SsmLayerParams, fuse, mix_output, ssm_scan, ssm_scan_naive
from .model import ModelParams, TextEmbedding, encode_text, init_params, stylize_frame
from .losses import LossWeights, MaskSet, sample_masks, tmd_loss, tso_loss
from .metrics import EvalReport, ssim, style_score, t_ssim
from .data import VideoClip, read_ppm, synth_video, write_ppm
from .train import TrainConfig, adamw_step, run_ablation, stylize, train

__version__ = "0.1.0"
