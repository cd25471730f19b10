"""Image-domain denoiser: primitives, network, optimizer and training loop."""
from .layers import (batchnorm, conv2d, conv2d_transpose, dropout, leaky_relu, relu)
from .model import (REFERENCE_LAYERS, REFERENCE_PARAM_COUNT, LayerSpec, UNetConfig, UNetModel, count_params,
                    lsd_loss, lsd_loss_grad, unet_backward, unet_build, unet_forward)
from .train import (CheckpointError, OptimizerState, TrainRunConfig, adam_step, checkpoint_load,
                    checkpoint_save, read_loss_curve, train_denoiser, write_loss_curve)
