"""Transfer from a donor model: block policies, AutoFreeze, L2-SP and GTOT."""
from .methods import (
    GTOT,
    L2SP,
    TTT,
    AutoFreeze,
    FinetuneResult,
    Manual,
    MethodError,
    TransferMethod,
    autofreeze_update,
    batch_mask,
    finetune,
    finetune_lr,
    l2sp_penalty,
    method_from_spec,
    prepare_receiver,
)
from .ot import SinkhornResult, gtot_distance, masked_sinkhorn
from .policies import Action, BlockPolicy, DonorSnapshot, InvalidPolicy, apply_policy, enumerate_valid_policies

__all__ = [
    "GTOT", "L2SP", "TTT", "Action", "AutoFreeze", "BlockPolicy", "DonorSnapshot", "FinetuneResult", "InvalidPolicy",
    "Manual", "MethodError", "SinkhornResult", "TransferMethod", "apply_policy", "autofreeze_update", "batch_mask",
    "enumerate_valid_policies", "finetune", "finetune_lr", "gtot_distance", "l2sp_penalty", "masked_sinkhorn",
    "method_from_spec", "prepare_receiver",
]
