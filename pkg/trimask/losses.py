from dataclasses import dataclass

import torch

# Training-table z-loss weight.
DEFAULT_Z_LOSS = 1e-5


@dataclass
class LossBreakdown:
    total: torch.Tensor
    diffusion: torch.Tensor
    z: torch.Tensor
    per_position: torch.Tensor


def masked_loss(logits, targets, masked, weight=1.0, z_loss=DEFAULT_Z_LOSS):
    """
    ELBO-weighted masked cross-entropy plus a z-loss, both averaged over the
    masked positions of each sequence and then over the batch.

    ``logits`` is [B, L, V] (or [L, V]), ``targets`` the clean ids, ``masked``
    a bool tensor of the positions in I_t, ``weight`` a scalar or one w(t)
    per sequence. Sequences with an empty I_t contribute zero to both terms.
    The softmax runs over the full vocabulary.
    """
    if logits.dim() == 2:
        logits, targets, masked = logits[None], targets[None], masked[None]
    masked = masked.to(torch.bool)
    log_norm = torch.logsumexp(logits, dim=-1)
    target_logits = logits.gather(-1, targets.long().unsqueeze(-1)).squeeze(-1)
    zero = torch.zeros((), dtype=logits.dtype, device=logits.device)
    per_position = torch.where(masked, log_norm - target_logits, zero)
    counts = masked.sum(dim=-1).clamp(min=1).to(logits.dtype)
    weight = torch.as_tensor(weight, dtype=logits.dtype, device=logits.device)
    weight = weight.expand(logits.shape[0])
    diffusion = (weight * per_position.sum(dim=-1) / counts).mean()
    squared = torch.where(masked, log_norm**2, zero)
    z = z_loss * (squared.sum(dim=-1) / counts).mean()
    return LossBreakdown(diffusion + z, diffusion, z, per_position)
