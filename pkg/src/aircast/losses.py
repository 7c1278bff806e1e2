"""Prediction loss plus mass-balance penalties on the transport readout.

The constraint terms act on the transport readout stacked over t = 0..T:
`spatial` penalizes the per-step net mass the readout claims to move into
or out of the station set (it should sum to ~zero over stations), and
`temporal` penalizes step-to-step drift of that net mass. An optional
smoothness term (L2 over consecutive readout differences) is kept for
ablation but disabled by default.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ValidationError
from .numerics import Tensor, slice0

METRICS_COLUMNS = ("epoch", "split", "l1", "dic_spatial", "dic_temporal", "total")


@dataclass
class LossBreakdown:
    """Scalar components; `total_tensor` carries the differentiable value."""

    l1: float
    dic_spatial: float
    dic_temporal: float
    dic_smooth: float
    total: float
    lam: float
    total_tensor: Tensor = field(default=None, repr=False, compare=False)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def l1_loss(pred, truth) -> Tensor:
    """Mean absolute error over every element, as a differentiable scalar."""
    pred, truth = _as_tensor(pred), _as_tensor(truth)
    if pred.shape != truth.shape:
        raise DimensionError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    return (pred - truth).abs().mean()


def dic_loss(transport) -> tuple:
    """(spatial, temporal) balance penalties from the transport readout.

    Accepts (T+1, V, 2) or batched (T+1, B, V, 2); stations are always the
    second-to-last axis. Slice 0 is the last historical step, needed for
    the first temporal difference.
    """
    transport = _as_tensor(transport)
    if transport.ndim not in (3, 4):
        raise DimensionError(
            f"transport must be (T+1, V, 2) or (T+1, B, V, 2), got {transport.shape}")
    if transport.shape[0] < 2:
        raise ValidationError("transport needs at least 2 time slices")
    net = transport.sum(axis=-2)          # per-step net mass by channel
    current = slice0(net, 1)              # t = 1..T
    previous = slice0(net, 0, net.shape[0] - 1)
    spatial = current.abs().mean()
    temporal = (current - previous).abs().mean()
    return spatial, temporal


def dic_smooth(transport) -> Tensor:
    """Mean L2 norm of consecutive transport differences (optional term)."""
    transport = _as_tensor(transport)
    if transport.ndim not in (3, 4):
        raise DimensionError(f"bad transport shape {transport.shape}")
    if transport.shape[0] < 2:
        raise ValidationError("transport needs at least 2 time slices")
    diff = slice0(transport, 1) - slice0(transport, 0, transport.shape[0] - 1)
    return diff.square().sum(axis=(-2, -1)).sqrt().mean()


def total_loss(pred, truth, transport, lam: float,
               include_smooth: bool = False) -> LossBreakdown:
    """Compose l1 + lam * (spatial + temporal [+ smooth]).

    At lam = 0 the total IS the l1 tensor, so the two are equal exactly,
    but the constraint components are still reported for monitoring.
    """
    if lam < 0:
        raise ValidationError(f"lambda must be nonnegative, got {lam}")
    l1_t = l1_loss(pred, truth)
    spatial_t, temporal_t = dic_loss(transport)
    smooth_t = dic_smooth(transport) if include_smooth else None

    if lam == 0.0:
        total_t = l1_t
    else:
        dic_sum = spatial_t + temporal_t
        if smooth_t is not None:
            dic_sum = dic_sum + smooth_t
        total_t = l1_t + lam * dic_sum

    return LossBreakdown(l1=l1_t.item(),
                         dic_spatial=spatial_t.item(),
                         dic_temporal=temporal_t.item(),
                         dic_smooth=smooth_t.item() if smooth_t is not None else 0.0,
                         total=total_t.item(),
                         lam=float(lam),
                         total_tensor=total_t)


def breakdown_row(epoch: int, split: str, b: LossBreakdown) -> list:
    """One metrics-CSV row; column order fixed by METRICS_COLUMNS."""
    return [epoch, split, repr(b.l1), repr(b.dic_spatial),
            repr(b.dic_temporal), repr(b.total)]
