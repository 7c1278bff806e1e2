"""Network primitives and the autoregressive rollout.

One rollout step embeds [pollutants, meteorology, emissions] into a
hidden row per station, then applies three residual enhancements: a
per-station MLP over RMS-normalized features (local interactions), a
linear map of the Laplacian-propagated field (spatial transport), and a
gated recurrent cell (temporal accumulation). A linear readout yields the
concentration increment; a second readout projects the transport message
into concentration units for the conservation penalties.

During the historical phase the state trajectory is anchored to ground
truth (teacher forcing), so the prediction chain starts at the last
observation; with all-zero parameters the rollout therefore reproduces
the persistence forecast bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ctm_oracle import P_CHANNELS, Q_CHANNELS, X_CHANNELS
from .errors import DimensionError, NumericError, ValidationError
from .numerics import Array, ParamSet, Tensor, concat, matmul, stack
from .spatial_graph import SpatialGraph, apply_laplacian

N_X = len(X_CHANNELS)
N_P = len(P_CHANNELS)
N_Q = len(Q_CHANNELS)
INPUT_WIDTH = N_X + N_P + N_Q

GRU_GATES = ("z", "r", "n")


@dataclass
class ModelConfig:
    hidden: int = 32
    mlp_depth: int = 2
    dropout_rate: float = 0.1
    rmsnorm_eps: float = 1e-6
    # ablation switches; all on for the full model
    use_lid: bool = True
    use_std: bool = True
    use_tad: bool = True
    use_emissions: bool = True

    def validate(self) -> None:
        if self.hidden < 1:
            raise ValidationError(f"hidden width must be >= 1, got {self.hidden}")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValidationError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.mlp_depth < 1:
            raise ValidationError(f"mlp_depth must be >= 1, got {self.mlp_depth}")
        if self.rmsnorm_eps <= 0:
            raise ValidationError("rmsnorm_eps must be positive")

    def to_dict(self) -> dict:
        return {"hidden": self.hidden, "mlp_depth": self.mlp_depth,
                "dropout_rate": self.dropout_rate, "rmsnorm_eps": self.rmsnorm_eps,
                "use_lid": self.use_lid, "use_std": self.use_std,
                "use_tad": self.use_tad, "use_emissions": self.use_emissions}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        cfg = cls(**d)
        cfg.validate()
        return cfg


def init_params(cfg: ModelConfig, seed: int = 0) -> ParamSet:
    """Seeded uniform(-1/sqrt(fan_in), +) linears, unit gains, zero GRU biases."""
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9D]))
    h = cfg.hidden

    def uniform(fan_in, shape):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, shape)

    p = ParamSet()
    p.add("embed.w", uniform(INPUT_WIDTH, (INPUT_WIDTH, h)))
    p.add("embed.b", uniform(INPUT_WIDTH, (h,)))
    p.add("lid.gain", np.ones(h))
    for i in range(1, cfg.mlp_depth + 1):
        p.add(f"lid.w{i}", uniform(h, (h, h)))
        p.add(f"lid.b{i}", uniform(h, (h,)))
    p.add("std.w", uniform(h, (h, h)))
    p.add("std.b", uniform(h, (h,)))
    for gate in GRU_GATES:
        p.add(f"gru.w{gate}", uniform(h, (h, h)))
        p.add(f"gru.u{gate}", uniform(h, (h, h)))
        p.add(f"gru.b{gate}", np.zeros(h))
    p.add("readout.w", uniform(h, (h, N_X)))
    p.add("readout.b", uniform(h, (N_X,)))
    p.add("std_readout.w", uniform(h, (h, N_X)))
    p.add("std_readout.b", uniform(h, (N_X,)))
    return p


def zero_params(cfg: ModelConfig) -> ParamSet:
    """Same names and shapes as init_params, all values zero."""
    p = init_params(cfg, seed=0)
    for t in p.values():
        t.data = np.zeros_like(t.data)
    return p


def rmsnorm(x: Tensor, gain: Tensor, eps: float) -> Tensor:
    """Per-row x / sqrt(mean(x^2) + eps), scaled by the per-feature gain."""
    ms = x.square().mean(axis=1, keepdims=True)
    return x / (ms + eps).sqrt() * gain


def _linear(x: Tensor, params: ParamSet, name: str) -> Tensor:
    return matmul(x, params[f"{name}.w"]) + params[f"{name}.b"]


def lid_forward(h: Tensor, params: ParamSet, cfg: ModelConfig,
                dropout_mask: Array = None) -> Tensor:
    """Local-interaction enhancement; the caller adds it residually."""
    a = rmsnorm(h, params["lid.gain"], cfg.rmsnorm_eps)
    for i in range(1, cfg.mlp_depth + 1):
        a = matmul(a, params[f"lid.w{i}"]) + params[f"lid.b{i}"]
        if i < cfg.mlp_depth:
            a = a.silu()
    if dropout_mask is not None:
        a = a * Tensor(dropout_mask)
    return a


def std_forward(h: Tensor, graph: SpatialGraph, params: ParamSet) -> Tensor:
    """Spatial-transport message: linear map of the Laplacian-mixed field."""
    return _linear(apply_laplacian(graph, h), params, "std")


def _std_message(h: Tensor, laplacian: Tensor, params: ParamSet) -> Tensor:
    return _linear(matmul(laplacian, h), params, "std")


def gru_cell(h_in: Tensor, z_prev: Tensor, params: ParamSet) -> Tensor:
    update = (matmul(h_in, params["gru.wz"]) + matmul(z_prev, params["gru.uz"])
              + params["gru.bz"]).sigmoid()
    reset = (matmul(h_in, params["gru.wr"]) + matmul(z_prev, params["gru.ur"])
             + params["gru.br"]).sigmoid()
    cand = (matmul(h_in, params["gru.wn"]) + reset * matmul(z_prev, params["gru.un"])
            + params["gru.bn"]).tanh()
    return (1.0 - update) * cand + update * z_prev


@dataclass
class RolloutTrace:
    """Everything a rollout produced, keyed by forecast-relative step t.

    predictions stacks X-hat for t = 1..T; transport stacks the
    conservation readout for t = 0..T. xhat_list runs t = -T'+1..T (the
    historical entries are the teacher-forced observations), delta_list
    runs t = -T'+2..T. Hidden-state lists align with delta_list; entries
    are None for ablated branches.
    """

    predictions: Tensor
    transport: Tensor
    t_hist: int
    t_fore: int
    xhat_list: list = field(default_factory=list)
    delta_list: list = field(default_factory=list)
    h_list: list = field(default_factory=list)
    e_list: list = field(default_factory=list)
    m_list: list = field(default_factory=list)
    z_list: list = field(default_factory=list)

    def future_deltas(self) -> list:
        return self.delta_list[self.t_hist - 1:]


def rollout(sample, graph: SpatialGraph, params: ParamSet, cfg: ModelConfig,
            mode: str = "infer", dropout_rng=None,
            laplacian: Array = None) -> RolloutTrace:
    """Run the recurrent forecast over one (possibly station-stacked) sample.

    `laplacian` overrides the graph operator; the trainer passes a
    block-diagonal matrix to process a whole batch as stacked rows.
    x_future is never read, so forecast-time samples may set it to None.
    """
    cfg.validate()
    if mode not in ("train", "infer"):
        raise ValidationError(f"mode must be train or infer, got {mode!r}")
    x_hist = np.asarray(sample.x_hist, dtype=np.float64)
    p_all = np.asarray(sample.p_all, dtype=np.float64)
    q_all = np.asarray(sample.q_all, dtype=np.float64)
    t_hist = x_hist.shape[0]
    rows = x_hist.shape[1]
    t_fore = p_all.shape[0] - t_hist
    if t_hist < 2:
        raise ValidationError(f"history must cover >= 2 steps, got {t_hist}")
    if t_fore < 1:
        raise ValidationError("covariates must extend past the history window")
    if x_hist.shape[2] != N_X or p_all.shape[2] != N_P or q_all.shape[2] != N_Q:
        raise DimensionError("channel counts do not match the fixed roster")
    if p_all.shape[1] != rows or q_all.shape[1] != rows or q_all.shape[0] != p_all.shape[0]:
        raise DimensionError("sample arrays disagree on stations or span")
    lap = graph.laplacian if laplacian is None else laplacian
    if lap.shape != (rows, rows):
        raise DimensionError(
            f"operator is {lap.shape} but sample has {rows} station rows")
    use_dropout = (mode == "train" and cfg.use_lid and cfg.dropout_rate > 0.0)
    if use_dropout and dropout_rng is None:
        raise ValidationError("train mode with dropout needs dropout_rng")
    if not cfg.use_emissions:
        q_all = np.zeros_like(q_all)

    lap_t = Tensor(lap)
    off = t_hist - 1
    zeros_h = Tensor(np.zeros((rows, cfg.hidden)))
    zeros_x = Tensor(np.zeros((rows, N_X)))

    trace = RolloutTrace(predictions=None, transport=None,
                         t_hist=t_hist, t_fore=t_fore)
    trace.xhat_list.append(Tensor(x_hist[0]))  # seed t = -T'+1
    transport_list = []
    z_prev = zeros_h
    xhat_prev = trace.xhat_list[0]

    for t in range(-t_hist + 2, t_fore + 1):
        x_in = Tensor(x_hist[t - 1 + off]) if t < 1 else xhat_prev
        h = _linear(concat([x_in, Tensor(p_all[t + off]), Tensor(q_all[t + off])],
                           axis=1), params, "embed")
        if cfg.use_lid:
            mask = None
            if use_dropout:
                keep = dropout_rng.random((rows, cfg.hidden)) >= cfg.dropout_rate
                mask = keep / (1.0 - cfg.dropout_rate)
            e = lid_forward(h, params, cfg, mask)
            h = h + e
        else:
            e = None
        if cfg.use_std:
            m = _std_message(h, lap_t, params)
            h = h + m
        else:
            m = None
        if cfg.use_tad:
            z = gru_cell(h, z_prev, params)
            h = h + z
            z_prev = z
        else:
            z = None
        if not np.all(np.isfinite(h.data)):
            raise NumericError(f"non-finite hidden state at step t={t}")
        delta = _linear(h, params, "readout")

        if t < 1:
            # teacher forcing: re-anchor the state chain to ground truth
            xhat = Tensor(x_hist[t + off])
        else:
            xhat = xhat_prev + delta
        xhat_prev = xhat

        trace.xhat_list.append(xhat)
        trace.delta_list.append(delta)
        trace.h_list.append(h)
        trace.e_list.append(e)
        trace.m_list.append(m)
        trace.z_list.append(z)
        if t >= 0:
            transport_list.append(_linear(m, params, "std_readout")
                                  if cfg.use_std else zeros_x)

    trace.predictions = stack(trace.xhat_list[t_hist:], axis=0)
    trace.transport = stack(transport_list, axis=0)
    return trace
