"""Transfer a frozen image/text teacher to a trainable event-frame encoder."""

__version__ = "0.1.0"

from .encoders import (
    AdapterParams,
    EncoderParams,
    adapter_apply,
    encode_event,
    encode_image,
    encode_prompts,
    encode_text,
    init_event_encoder,
)
from .errors import ConfigError, DataError, DimensionError, EvclipError, NumericalError
from .events import EventStream, aggregate_events, clamp_counts, event_frame, normalize_grid
from .losses import BatchEmbeddings, LossConfig, combined_loss, info_nce, kl_align, pred_loss, zs_loss

__all__ = [
    "AdapterParams", "BatchEmbeddings", "ConfigError", "DataError", "DimensionError", "EncoderParams",
    "EventStream", "EvclipError", "LossConfig", "NumericalError", "adapter_apply", "aggregate_events",
    "clamp_counts", "combined_loss", "encode_event", "encode_image", "encode_prompts", "encode_text",
    "event_frame", "info_nce", "init_event_encoder", "kl_align", "normalize_grid", "pred_loss", "zs_loss",
]
