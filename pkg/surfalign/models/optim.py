"""
AdamW updates and the cosine learning-rate schedule shared by both trainers.
"""
import logging
import math

import torch

from surfalign.errors import ArgumentError

logger = logging.getLogger(__name__)


def cosine_lr(step, total_steps, lr_max, lr_min=0.0):
    """
    Cosine decay from lr_max at step 0 to lr_min at total_steps.

    Args:
        step (int): current step, clamped to [0, total_steps]
        total_steps (int): schedule length
        lr_max (float): initial rate
        lr_min (float): final rate

    Returns:
        float: lr_min + 0.5 (lr_max - lr_min)(1 + cos(pi step / total_steps))
    """
    if total_steps <= 0:
        return lr_max
    t = min(max(step, 0), total_steps)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / total_steps))


def make_optimizer(params, lr, weight_decay=0.05, betas=(0.9, 0.999), eps=1e-8):
    """
    AdamW over the trainable tensors in ``params``.

    Args:
        params (iterable): parameters (tensors) to optimise
        lr (float): initial learning rate
        weight_decay (float): decoupled weight decay
        betas (tuple): moment coefficients

    Returns:
        torch.optim.AdamW: optimizer; raises ArgumentError when nothing is trainable
    """
    params = [p for p in params if p.requires_grad]
    if not params:
        raise ArgumentError("no trainable parameters to optimise")
    return torch.optim.AdamW(params, lr=lr, weight_decay=weight_decay, betas=tuple(betas), eps=eps)


def set_lr(optimizer, lr):
    for group in optimizer.param_groups:
        group["lr"] = lr


def adamw_step(params, grads, optimizer, lr):
    """
    Apply one AdamW update with externally computed gradients.

    Args:
        params (dict): name -> parameter tensor
        grads (dict): name -> gradient of the same shape
        optimizer (torch.optim.AdamW): holds the moment state and step count
        lr (float): learning rate for this step (from cosine_lr)

    Returns:
        torch.optim.AdamW: the optimizer, after the step
    """
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            param.grad = None
            continue
        if grad.shape != param.shape:
            raise ArgumentError(f"gradient for {name} has shape {tuple(grad.shape)}, expected {tuple(param.shape)}")
        param.grad = grad.to(dtype=param.dtype)
    set_lr(optimizer, lr)
    optimizer.step()
    return optimizer
