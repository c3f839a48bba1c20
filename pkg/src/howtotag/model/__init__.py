"""Desk-scale transformer encoder with analytic gradients."""

from .encoder import (
    ForwardOutput,
    attention_masks_for_order,
    classify,
    classify_backward,
    classify_batched,
    classify_forward,
    forward_encoder,
    forward_two_stream,
)
from .objectives import (
    choose_mask_positions,
    mlm_loss,
    plm_loss,
    sample_factorization_orders,
    sequential_ar_nll,
)
from .params import (
    ModelConfig,
    ModelError,
    Parameters,
    init_params,
    load_checkpoint,
    param_shapes,
    save_checkpoint,
)

__all__ = [
    "ForwardOutput", "ModelConfig", "ModelError", "Parameters",
    "attention_masks_for_order", "choose_mask_positions", "classify", "classify_backward",
    "classify_batched", "classify_forward", "forward_encoder", "forward_two_stream",
    "init_params", "load_checkpoint", "mlm_loss", "param_shapes", "plm_loss",
    "sample_factorization_orders", "save_checkpoint", "sequential_ar_nll",
]
