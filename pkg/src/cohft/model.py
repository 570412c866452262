"""Two-stream super-resolution network.

Main stream: stages of RRDBs on the LR intensity features.  Prior stream:
cascaded blocks of short-window attention, long-window attention and
inter-modality attention on the LR gradient features, guided by the HR
guidance-gradient features.  An input gate lifts the three images to feature
maps; the output gate jointly emits the HR intensity (on top of a bicubic
global skip) and the HR gradient map.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attention import AttentionConfig, AttentionWeights, _uniform, _zeros, init_attention_weights
from .crossmod import InterModalityWeights, init_inter_modality_weights, inter_modality_attention
from .resample import bicubic_upsample
from .tensor import ShapeError, Tensor
from .windows import MLPWeights, init_mlp_weights, window_attention


@dataclass
class ModelConfig:
    d: int = 32
    stages: int = 4
    rrdbs_per_stage: int = 5
    rdbs_per_rrdb: int = 3
    convs_per_rdb: int = 5
    g: int = 6
    p_intra: int = 1
    p_inter: int = 5
    M: int = 4
    r: int = 4
    variant: str = "L"
    use_short_wa: bool = True
    use_long_wa: bool = True
    use_inter_attn: bool = True
    use_inter_head: bool = True
    use_adain: bool = True

    def intra_cfg(self):
        return AttentionConfig(d=self.d, M=self.M, p=self.p_intra, rho=1)

    def inter_cfg(self):
        return AttentionConfig(d=self.d, M=self.M, p=self.p_inter, rho=self.r)

    def preflight(self, h, w):
        """Reject incompatible LR extents before any compute."""
        problems = []
        for gg in (self.g,):
            if h % gg or w % gg:
                problems.append(f"extents {h}x{w} not divisible by window side g={gg}")
        if h % self.p_intra or w % self.p_intra:
            problems.append(f"extents {h}x{w} not divisible by p_intra={self.p_intra}")
        if h % self.p_inter or w % self.p_inter:
            problems.append(f"extents {h}x{w} not divisible by p_inter={self.p_inter}")
        if problems:
            raise ShapeError("; ".join(problems))


_PRESETS = {
    "L": dict(d=32, stages=4, rrdbs_per_stage=5, rdbs_per_rrdb=3, convs_per_rdb=5,
              g=6, p_intra=1, p_inter=5, M=4),
    "M": dict(d=16, stages=3, rrdbs_per_stage=5, rdbs_per_rrdb=3, convs_per_rdb=3,
              g=6, p_intra=1, p_inter=5, M=4),
    "S": dict(d=16, stages=2, rrdbs_per_stage=5, rdbs_per_rrdb=2, convs_per_rdb=3,
              g=6, p_intra=1, p_inter=5, M=4),
    "tiny": dict(d=4, stages=1, rrdbs_per_stage=1, rdbs_per_rrdb=1, convs_per_rdb=2,
                 g=3, p_intra=1, p_inter=2, M=2),
}


def preset(name, r=2, **overrides):
    if name not in _PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(_PRESETS)}")
    kw = dict(_PRESETS[name])
    kw.update(overrides)
    return ModelConfig(variant=name, r=r, **kw)


# ---------------------------------------------------------------------------
# weights


@dataclass
class Conv:
    w: Tensor
    b: Tensor


def init_conv(k, c_in, c_out, rng, dtype, zero=False):
    if zero:
        w = _zeros((k, k, c_in, c_out), dtype)
    else:
        w = _uniform(rng, (k, k, c_in, c_out), k * k * c_in, dtype)
    return Conv(w=w, b=_zeros(c_out, dtype))


def conv(x, c: Conv, stride=1, pad=None):
    if pad is None:
        pad = (c.w.shape[0] - 1) // 2
    return T.conv2d(x, c.w, c.b, stride=stride, pad=pad)


@dataclass
class RDBWeights:
    convs: list[Conv]


@dataclass
class RRDBWeights:
    rdbs: list[RDBWeights]


def init_rrdb_weights(cfg: ModelConfig, rng, dtype, safe_start=True):
    d, gc = cfg.d, cfg.d // 2
    rdbs = []
    for _ in range(cfg.rdbs_per_rrdb):
        convs = []
        for i in range(cfg.convs_per_rdb - 1):
            convs.append(init_conv(3, d + i * gc, gc, rng, dtype))
        last_in = d + (cfg.convs_per_rdb - 1) * gc
        convs.append(init_conv(3, last_in, d, rng, dtype, zero=safe_start))
        rdbs.append(RDBWeights(convs=convs))
    return RRDBWeights(rdbs=rdbs)


@dataclass
class GateWeights:
    lift: Conv           # 3x3, 1 -> d
    rrdb: RRDBWeights


@dataclass
class CohfTBlockWeights:
    short_attn: AttentionWeights
    short_mlp: MLPWeights
    long_attn: AttentionWeights
    long_mlp: MLPWeights
    inter: InterModalityWeights


@dataclass
class StageWeights:
    rrdbs: list[RRDBWeights]
    struct_conv: Conv    # 3x3, d -> d
    fuse_conv: Conv      # 3x3, 2d -> d
    select_conv: Conv    # 3x3, d -> 1
    block: CohfTBlockWeights


@dataclass
class ModelState:
    gate_main: GateWeights
    gate_struct: GateWeights
    gate_context: GateWeights
    stages: list[StageWeights]
    out_fuse: Conv       # 3x3, 2d -> d r^2
    head_intensity: Conv  # 3x3, d -> 1, zero-initialized
    head_gradient: Conv   # 3x3, d -> 1, zero-initialized


def init_model(cfg: ModelConfig, seed=0, dtype=np.float64, safe_start=True):
    rng = np.random.default_rng(seed)
    d = cfg.d

    def gate():
        return GateWeights(lift=init_conv(3, 1, d, rng, dtype),
                           rrdb=init_rrdb_weights(cfg, rng, dtype, safe_start))

    def block():
        return CohfTBlockWeights(
            short_attn=init_attention_weights(cfg.intra_cfg(), rng, dtype, safe_start),
            short_mlp=init_mlp_weights(d, rng, dtype, safe_start),
            long_attn=init_attention_weights(cfg.intra_cfg(), rng, dtype, safe_start),
            long_mlp=init_mlp_weights(d, rng, dtype, safe_start),
            inter=init_inter_modality_weights(cfg.inter_cfg(), rng, dtype, safe_start),
        )

    stages = []
    for _ in range(cfg.stages):
        stages.append(StageWeights(
            rrdbs=[init_rrdb_weights(cfg, rng, dtype, safe_start)
                   for _ in range(cfg.rrdbs_per_stage)],
            struct_conv=init_conv(3, d, d, rng, dtype),
            fuse_conv=init_conv(3, 2 * d, d, rng, dtype),
            select_conv=init_conv(3, d, 1, rng, dtype),
            block=block(),
        ))
    return ModelState(
        gate_main=gate(), gate_struct=gate(), gate_context=gate(),
        stages=stages,
        out_fuse=init_conv(3, 2 * d, d * cfg.r * cfg.r, rng, dtype),
        head_intensity=init_conv(3, d, 1, rng, dtype, zero=safe_start),
        head_gradient=init_conv(3, d, 1, rng, dtype, zero=safe_start),
    )


def named_parameters(obj, prefix=""):
    """Yield (hierarchical name, Tensor) in definition order."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            yield from named_parameters(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_parameters(item, f"{prefix}.{i}")


def count_parameters(state):
    return sum(t.size for _, t in named_parameters(state))


def state_arrays(state):
    return [(name, t.data) for name, t in named_parameters(state)]


def load_state_arrays(state, arrays: dict):
    for name, t in named_parameters(state):
        if name not in arrays:
            raise KeyError(f"checkpoint is missing parameter {name!r}")
        arr = arrays[name]
        if arr.shape != t.data.shape:
            raise ShapeError(f"parameter {name!r}: checkpoint shape {arr.shape} != model {t.data.shape}")
        t.data = arr.astype(t.data.dtype)


# ---------------------------------------------------------------------------
# forward graph


def rdb_forward(x, weights: RDBWeights):
    feats = [x]
    for c in weights.convs[:-1]:
        inp = feats[0] if len(feats) == 1 else T.concat(feats, axis=-1)
        feats.append(T.leaky_relu(conv(inp, c), 0.2))
    delta = conv(T.concat(feats, axis=-1) if len(feats) > 1 else feats[0], weights.convs[-1])
    return x + 0.2 * delta


def rrdb(x, weights: RRDBWeights):
    """Residual-in-residual dense block; identity when every RDB's last conv is zero."""
    y = x
    for w in weights.rdbs:
        y = rdb_forward(y, w)
    return x + 0.2 * (y - x)


def input_gate(i_in, r_s, r_c, state: ModelState, cfg: ModelConfig):
    """Lift the three input images to d-channel features (context keeps HR extents)."""
    h, w = i_in.shape[0], i_in.shape[1]
    cfg.preflight(h, w)
    if r_c.shape[0] != cfg.r * h or r_c.shape[1] != cfg.r * w:
        raise ShapeError(f"guidance extents {r_c.shape[0]}x{r_c.shape[1]} "
                         f"do not equal r={cfg.r} times {h}x{w}")
    f0 = rrdb(conv(i_in, state.gate_main.lift), state.gate_main.rrdb)
    fs0 = rrdb(conv(r_s, state.gate_struct.lift), state.gate_struct.rrdb)
    fc0 = rrdb(conv(r_c, state.gate_context.lift), state.gate_context.rrdb)
    return f0, fs0, fc0


def cohf_t_block(e_i, fs_i, fc0, block: CohfTBlockWeights, cfg: ModelConfig):
    """Short-window, long-window, then inter-modality attention on the prior features.

    e_i is part of the stage interface but enters the block only through fs_i.
    Disabled switches replace the corresponding stage with the identity.
    """
    del e_i
    y = fs_i
    if cfg.use_short_wa:
        y = window_attention(y, cfg.g, "short", block.short_attn, block.short_mlp,
                             cfg.intra_cfg(), use_inter_head=cfg.use_inter_head)
    if cfg.use_long_wa:
        y = window_attention(y, cfg.g, "long", block.long_attn, block.long_mlp,
                             cfg.intra_cfg(), use_inter_head=cfg.use_inter_head)
    if cfg.use_inter_attn:
        y = inter_modality_attention(y, fc0, block.inter, cfg.inter_cfg(),
                                     use_inter_head=cfg.use_inter_head,
                                     use_adain=cfg.use_adain)
    return y


def stage_forward(f_prev, p_prev, fc0, stage: StageWeights, cfg: ModelConfig):
    e_i = f_prev
    for w in stage.rrdbs:
        e_i = rrdb(e_i, w)
    fbar_s = conv(e_i, stage.struct_conv)
    fs_i = conv(T.concat([p_prev, fbar_s], axis=-1), stage.fuse_conv)
    p_i = cohf_t_block(e_i, fs_i, fc0, stage.block, cfg)
    t_i = T.sigmoid(conv(fbar_s, stage.select_conv))
    f_i = e_i + t_i * p_i
    return f_i, p_i


def output_gate(f_last, p_last, state: ModelState, r, i_bicubic):
    """Joint HR intensity / gradient synthesis; intensity rides a bicubic global skip."""
    y = conv(T.concat([f_last, p_last], axis=-1), state.out_fuse)
    y = T.pixel_shuffle(y, r)
    y = T.gelu(y)
    i_out = conv(y, state.head_intensity) + i_bicubic
    r_out = conv(y, state.head_gradient)
    return i_out, r_out


def forward(i_in, r_s, r_c, state: ModelState, cfg: ModelConfig):
    """Full pipeline: input gate, all stages, output gate.

    Inputs are [h,w,1] / [rh,rw,1] arrays or Tensors; returns (I_out, R_out)
    at HR extents.
    """
    dtype = state.head_intensity.b.data.dtype
    i_in = i_in if isinstance(i_in, Tensor) else Tensor(np.asarray(i_in, dtype=dtype))
    r_s = r_s if isinstance(r_s, Tensor) else Tensor(np.asarray(r_s, dtype=dtype))
    r_c = r_c if isinstance(r_c, Tensor) else Tensor(np.asarray(r_c, dtype=dtype))
    f_i, p_i, fc0 = input_gate(i_in, r_s, r_c, state, cfg)
    for stage in state.stages:
        f_i, p_i = stage_forward(f_i, p_i, fc0, stage, cfg)
    up = bicubic_upsample(i_in.data[:, :, 0], cfg.r)[:, :, None].astype(dtype)
    return output_gate(f_i, p_i, state, cfg.r, Tensor(up))
