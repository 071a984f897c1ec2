from .ops import (
    LayerSpec,
    conv3d_backward,
    conv3d_forward,
    maxpool3d_backward,
    maxpool3d_forward,
    relu_backward,
    relu_forward,
    sigmoid,
)
from .network import (
    Network,
    NetworkConfig,
    PredictionVector,
    SgdMomentum,
    network_forward,
    paper_scale,
    s3d_tiny,
    train_step,
)
from .serial import load_checkpoint, load_model, save_checkpoint, save_model

__all__ = [
    "LayerSpec",
    "Network",
    "NetworkConfig",
    "PredictionVector",
    "SgdMomentum",
    "conv3d_backward",
    "conv3d_forward",
    "load_checkpoint",
    "load_model",
    "maxpool3d_backward",
    "maxpool3d_forward",
    "network_forward",
    "paper_scale",
    "relu_backward",
    "relu_forward",
    "s3d_tiny",
    "save_checkpoint",
    "save_model",
    "sigmoid",
    "train_step",
]
