"""Micro transformer encoder with task heads and the paired small generator."""

from sptk.encoder.model import (
    init_model,
    ElectraModel,
    Encoder,
    EncoderConfig,
    Generator,
    MlmModel,
    backbone_param_names,
    count_params,
    init_electra_model,
    init_encoder,
    init_mlm_model,
    trunc_normal,
)
from sptk.encoder.heads import (
    ClsHead,
    SpanHead,
    TokenHead,
    decode_span,
    encode_pair_ids,
)
from sptk.encoder.checkpoint import (
    EncoderCheckpoint,
    load_checkpoint,
    save_checkpoint,
)

__all__ = [
    "ElectraModel",
    "Encoder",
    "EncoderConfig",
    "Generator",
    "MlmModel",
    "backbone_param_names",
    "count_params",
    "init_electra_model",
    "init_model",
    "init_encoder",
    "init_mlm_model",
    "trunc_normal",
    "ClsHead",
    "SpanHead",
    "TokenHead",
    "decode_span",
    "encode_pair_ids",
    "EncoderCheckpoint",
    "load_checkpoint",
    "save_checkpoint",
]
