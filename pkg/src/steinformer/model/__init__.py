from .accounting import CONVENTION, LedgerRow, count_params, estimate_flops, layer_ledger, write_ledger_csv
from .checkpoint import MAGIC, load_weights, read_sidecar, read_weights, save_weights
from .losses import LossConfig, dice_loss, focal_loss, hybrid_components, hybrid_loss
from .network import (
    MLPDecoder,
    ModelConfig,
    PatchEmbed,
    STeInFormer,
    build_model,
    mlp_decode,
    model_forward,
    patch_embed,
)

__all__ = [
    "CONVENTION",
    "MAGIC",
    "LedgerRow",
    "LossConfig",
    "MLPDecoder",
    "ModelConfig",
    "PatchEmbed",
    "STeInFormer",
    "build_model",
    "count_params",
    "dice_loss",
    "estimate_flops",
    "focal_loss",
    "hybrid_components",
    "hybrid_loss",
    "layer_ledger",
    "load_weights",
    "mlp_decode",
    "model_forward",
    "patch_embed",
    "read_sidecar",
    "read_weights",
    "save_weights",
    "write_ledger_csv",
]
