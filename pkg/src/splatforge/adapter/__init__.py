from .algebra import (
    FeatureMap,
    block_adapter_backward,
    block_adapter_forward,
    branch_exchange_backward,
    branch_exchange_forward,
)
from .blocks import FrozenBlock, ZeroConv
from .decoder import GaussianHead, SplatDecoder, decode_views
from .training import (
    AdapterPipeline,
    AdapterTrainer,
    load_checkpoint,
    make_stand_in_inputs,
    save_checkpoint,
)

__all__ = [
    "FeatureMap",
    "block_adapter_backward",
    "block_adapter_forward",
    "branch_exchange_backward",
    "branch_exchange_forward",
    "FrozenBlock",
    "ZeroConv",
    "GaussianHead",
    "SplatDecoder",
    "decode_views",
    "AdapterPipeline",
    "AdapterTrainer",
    "load_checkpoint",
    "make_stand_in_inputs",
    "save_checkpoint",
]
