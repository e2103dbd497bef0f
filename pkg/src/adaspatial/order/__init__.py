"""Ultra-light segmentation U-Net with selective bidirectional skip attention."""
from .attention import AttnResult, BiAttnUnit, bidir_attention, confidence_gate, fuse_skip
from .blocks import KERNELS, MkirBlock, mkir_forward
from .config import NUM_STAGES, STAGE_SWEEP, OrderConfig
from .loss import seg_loss
from .network import OrderNetwork, build_mkunet
from .train import NonFiniteSegLoss, SegRun, SegSettings, evaluate, predict, train_seg

__all__ = [
    "AttnResult", "BiAttnUnit", "KERNELS", "MkirBlock", "NUM_STAGES", "NonFiniteSegLoss",
    "OrderConfig", "OrderNetwork", "STAGE_SWEEP", "SegRun", "SegSettings", "bidir_attention",
    "build_mkunet", "confidence_gate", "evaluate", "fuse_skip", "mkir_forward", "predict",
    "seg_loss", "train_seg",
]
