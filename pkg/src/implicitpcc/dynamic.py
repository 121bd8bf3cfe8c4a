"""Frame-group coding: per-frame, parameter-residual, Bézier-curve and
spatio-temporal modes.

A single static cloud is an ``intra`` group of one frame.
"""

from __future__ import annotations

import dataclasses
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .attributes import (AttrTrainConfig, build_color_targets,
                         reconstruct_attributes, train_attribute_group)
from .bitstream.arith import (decode_cube_map, decode_indices,
                              encode_cube_map, encode_indices)
from .bitstream.container import (SECTION_ATTRIBUTES, SECTION_CUBES,
                                  SECTION_GEOMETRY, CodedStream, Section,
                                  StreamHeader, assemble, code_to_tau,
                                  disassemble)
from .geometry import (D1Objective, EmptyReconstructionError,
                       GeomTrainConfig, choose_threshold_code,
                       golden_section_maximize, occupancy_probabilities,
                       threshold_points, train_geometry_group)
from .nn.network import NetworkArch, NetworkParams
from .nn.quantization import QuantizedParams, dequantize, quantize_array
from .partition import CubeSet, GridParams, build_cube_set
from .pointcloud import VoxelizedCloud, VoxelTransform
from .training import MAX_CURVE_DEGREE, bernstein_weights, combine_controls, make_rng

MODES = ("intra", "residual", "curve", "fourD")
DEFAULT_GROUP_SIZE = 32
NET_GEOMETRY, NET_ATTRIBUTES = 0, 1


# --------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class BezierConfig:
    control_points: int = 3

    def __post_init__(self):
        if not 2 <= self.control_points <= MAX_CURVE_DEGREE + 1:
            raise ValueError(
                f"control_points must lie in [2, {MAX_CURVE_DEGREE + 1}]")

    @property
    def degree(self) -> int:
        return self.control_points - 1


@dataclass(frozen=True)
class DynamicMode:
    name: str = "intra"
    bezier: Optional[BezierConfig] = None
    temporal_levels: int = 4
    fresh_init: bool = False

    def __post_init__(self):
        if self.name not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.name!r}")
        if self.name == "curve" and self.bezier is None:
            raise ValueError("curve mode requires a BezierConfig")
        if self.name != "curve" and self.bezier is not None:
            raise ValueError("a BezierConfig only applies to curve mode")
        if self.temporal_levels < 0:
            raise ValueError("temporal_levels must be >= 0")


@dataclass
class FrameGroup:
    frames: list
    transform: VoxelTransform = field(default_factory=VoxelTransform)

    def __post_init__(self):
        if not self.frames:
            raise ValueError("a frame group needs at least one frame")
        bits = {f.resolution_bits for f in self.frames}
        if len(bits) != 1:
            raise ValueError("frames disagree on resolution_bits")

    @property
    def group_size(self) -> int:
        return len(self.frames)

    @property
    def resolution_bits(self) -> int:
        return self.frames[0].resolution_bits

    @property
    def has_colors(self) -> bool:
        return all(f.has_colors for f in self.frames)


def split_groups(frames: Sequence, group_size: int = DEFAULT_GROUP_SIZE
                 ) -> list:
    """Consecutive groups; the last one may be shorter."""
    if group_size < 1:
        raise ValueError("group_size must be >= 1")
    return [list(frames[i:i + group_size])
            for i in range(0, len(frames), group_size)]


def bezier_sample(controls: Sequence[NetworkParams], t: int,
                  group_size: int) -> NetworkParams:
    """Point of the Bézier curve through parameter space at frame ``t``."""
    if len(controls) < 2:
        raise ValueError("a curve needs at least two control points")
    arch = controls[0].arch
    if any(c.arch != arch for c in controls):
        raise ValueError("control points disagree on architecture")
    w = bernstein_weights(len(controls) - 1, t, group_size)
    stack = np.stack([c.flat for c in controls])
    return NetworkParams(arch, combine_controls(stack, w))


# --------------------------------------------------------------------------
# results

@dataclass
class FrameLog:
    frame: int
    tau: float
    points: int
    reconstructed_points: int
    geometry_losses: list = field(default_factory=list)
    attribute_losses: list = field(default_factory=list)
    # quantization indices of this frame's own geometry network, if any
    geometry_indices: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass
class EncodeResult:
    data: bytes
    stream: CodedStream
    reconstruction: list
    logs: list
    seconds: float

    @property
    def bits(self) -> int:
        return 8 * len(self.data)


@dataclass
class DecodedGroup:
    frames: list
    header: StreamHeader

    @property
    def transform(self) -> VoxelTransform:
        return VoxelTransform(self.header.scale, self.header.offset)


# --------------------------------------------------------------------------
# encoder pieces

def _quantized(flat: np.ndarray, arch: NetworkArch, step: float):
    idx = quantize_array(flat, step)
    return idx, dequantize(QuantizedParams(arch, step, idx))


def _fit_threshold(params, cube_set, original, steps, frame=None,
                   group_size=1):
    """``(tau code, reconstruction)`` for dequantized parameters."""
    vox, prob = occupancy_probabilities(params, cube_set, frame, group_size)
    objective = D1Objective(vox, prob, original)
    tau, finite = golden_section_maximize(objective, steps)
    if not finite:
        raise EmptyReconstructionError(
            f"frame {frame or 0}: every probed threshold gives an empty "
            f"reconstruction; train longer or lower lambda")
    code = choose_threshold_code(tau, objective)
    rec = threshold_points(vox, prob, code_to_tau(code),
                           original.resolution_bits)
    if len(rec) == 0:
        raise EmptyReconstructionError(
            f"frame {frame or 0}: the chosen threshold leaves no points")
    return code, rec


def _spatial_arch(arch: NetworkArch) -> NetworkArch:
    return dataclasses.replace(arch, input_dim=3, levels_temporal=0)


def _temporal_arch(arch: NetworkArch, levels: int) -> NetworkArch:
    return dataclasses.replace(arch, input_dim=4, levels_temporal=levels)


@dataclass
class _Coded:
    code: int
    recon: VoxelizedCloud
    log: FrameLog
    sections: list


def _encode_single(frame, index, global_frame, cube_bits, gcfg, acfg,
                   tau_steps, reference=None, attr_reference=None,
                   fresh_init=True, log_every=0):
    """One frame with one spatial network per attribute.

    With ``reference`` given (residual mode) the payload holds index
    deltas against the reference indices and training starts from them
    unless ``fresh_init``. Returns the coded frame and the new index
    buffers.
    """
    cube_set = build_cube_set(frame, cube_bits)
    garch = gcfg.arch
    rng = make_rng(gcfg.seed, global_frame, NET_GEOMETRY)
    ref_params = None
    init = None
    if reference is not None:
        ref_params = NetworkParams(garch, reference * gcfg.step_size)
        init = None if fresh_init else ref_params.flat[None, :]
    res = train_geometry_group([frame], [cube_set], gcfg, init=init,
                               reference=ref_params, rng=rng,
                               log_every=log_every)
    g_idx, g_hat = _coded_indices(res.controls[0], garch, gcfg.step_size,
                                  reference)
    code, rec = _fit_threshold(g_hat, cube_set, frame, tau_steps)
    log = FrameLog(global_frame, code_to_tau(code), len(frame), len(rec),
                   res.losses, geometry_indices=g_idx)
    sections = [Section(SECTION_CUBES, index, 0,
                        encode_cube_map(cube_set.cubes, cube_bits)),
                Section(SECTION_GEOMETRY, index, 0,
                        encode_indices(g_idx if reference is None
                                       else g_idx - reference))]
    a_idx = None
    if acfg is not None:
        aarch = acfg.arch
        targets = build_color_targets(rec, frame)
        arng = make_rng(acfg.seed, global_frame, NET_ATTRIBUTES)
        a_ref = a_init = None
        if attr_reference is not None:
            a_ref = NetworkParams(aarch, attr_reference * acfg.step_size)
            a_init = None if fresh_init else a_ref.flat[None, :]
        ares = train_attribute_group([targets], acfg, len(frame),
                                     init=a_init, reference=a_ref, rng=arng,
                                     log_every=log_every)
        a_idx, a_hat = _coded_indices(ares.controls[0], aarch,
                                      acfg.step_size, attr_reference)
        rec = reconstruct_attributes(a_hat, rec)
        log.attribute_losses = ares.losses
        sections.append(Section(
            SECTION_ATTRIBUTES, index, 0,
            encode_indices(a_idx if attr_reference is None
                           else a_idx - attr_reference)))
    return _Coded(code, rec, log, sections), g_idx, a_idx


def _coded_indices(flat, arch, step, reference):
    """Quantization indices and their dequantized network.

    In residual mode the delta is rounded in index space and added to the
    reference indices, so encoder and decoder accumulate identical
    integers.
    """
    if reference is None:
        idx, hat = _quantized(flat, arch, step)
        return idx.astype(np.int64), hat
    delta = quantize_array(flat - reference * step, step).astype(np.int64)
    idx = reference + delta
    return idx, NetworkParams(arch, idx * step)


def _intra_job(args):
    return _encode_single(*args)[0]


def encode_group(group: FrameGroup, mode: DynamicMode,
                 geometry: GeomTrainConfig,
                 attributes: Optional[AttrTrainConfig] = None, *,
                 cube_bits: int = 5, threshold_steps: int = 30,
                 first_frame: int = 0, workers: int = 1,
                 log: Optional[Callable[[str], None]] = None,
                 log_every: int = 0) -> EncodeResult:
    """Code a frame group into one container.

    ``attributes=None`` codes geometry only; otherwise every frame must
    carry colors. Seeds derive from ``(seed, first_frame + t)``.
    """
    start = time.perf_counter()
    say = log or (lambda msg: None)
    frames = group.frames
    T = group.group_size
    n = group.resolution_bits
    GridParams(n, cube_bits)
    if attributes is not None and not group.has_colors:
        raise ValueError("attribute coding needs colors on every frame")
    if any(len(f) == 0 for f in frames):
        raise ValueError("cannot code an empty frame")
    garch = geometry.arch
    aarch = attributes.arch if attributes is not None else None
    name = mode.name
    # a one-frame 4D group has a constant time input: code it spatially
    spatial = name in ("intra", "residual") or (name == "fourD" and T == 1)
    if spatial:
        garch = _spatial_arch(garch)
        aarch = aarch and _spatial_arch(aarch)
    elif name == "curve":
        if T < 2:
            raise ValueError("curve mode needs a group of at least 2 frames")
        garch = _spatial_arch(garch)
        aarch = aarch and _spatial_arch(aarch)
    else:
        garch = _temporal_arch(garch, mode.temporal_levels)
        aarch = aarch and _temporal_arch(aarch, mode.temporal_levels)
    gcfg = dataclasses.replace(geometry, arch=garch)
    acfg = attributes and dataclasses.replace(attributes, arch=aarch)

    if spatial:
        coded = _encode_spatial(frames, name, cube_bits, gcfg, acfg,
                                threshold_steps, first_frame, workers,
                                mode.fresh_init, say, log_every)
    elif name == "curve":
        coded = _encode_curve(frames, mode.bezier, cube_bits, gcfg, acfg,
                              threshold_steps, first_frame, say, log_every)
    else:
        coded = _encode_joint(frames, cube_bits, gcfg, acfg,
                              threshold_steps, first_frame, say, log_every)
    codes, recons, logs, sections = coded
    header = StreamHeader(
        mode=name, resolution_bits=n, cube_bits=cube_bits, group_size=T,
        geometry_arch=garch, geometry_step=gcfg.step_size,
        threshold_codes=tuple(codes),
        control_points=mode.bezier.control_points if name == "curve" else 0,
        attribute_arch=aarch,
        attribute_step=acfg.step_size if acfg is not None else 0.0,
        scale=tuple(float(s) for s in group.transform.scale),
        offset=tuple(float(o) for o in group.transform.offset))
    stream = CodedStream(header, sections)
    data = assemble(stream)
    return EncodeResult(data, stream, recons, logs,
                        time.perf_counter() - start)


def _encode_spatial(frames, name, cube_bits, gcfg, acfg, tau_steps,
                    first_frame, workers, fresh_init, say, log_every):
    codes, recons, logs, sections = [], [], [], []
    if name == "residual":
        g_ref = a_ref = None
        for t, frame in enumerate(frames):
            say(f"frame {first_frame + t}: training ({name})")
            c, g_ref, a_ref = _encode_single(
                frame, t, first_frame + t, cube_bits, gcfg, acfg, tau_steps,
                g_ref, a_ref, fresh_init, log_every)
            _collect(c, codes, recons, logs, sections, say)
        return codes, recons, logs, _ordered(sections)
    jobs = [(f, t, first_frame + t, cube_bits, gcfg, acfg, tau_steps,
             None, None, True, log_every) for t, f in enumerate(frames)]
    if workers > 1 and len(frames) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_intra_job, jobs))
    else:
        results = []
        for job in jobs:
            say(f"frame {job[2]}: training ({name})")
            results.append(_intra_job(job))
    for c in results:
        _collect(c, codes, recons, logs, sections, say)
    return codes, recons, logs, _ordered(sections)


def _collect(c, codes, recons, logs, sections, say):
    codes.append(c.code)
    recons.append(c.recon)
    logs.append(c.log)
    sections.extend(c.sections)
    say(f"frame {c.log.frame}: tau={c.log.tau:.6f} "
        f"points {c.log.points} -> {c.log.reconstructed_points}")


def _ordered(sections):
    return sorted(sections, key=lambda s: (s.kind, s.frame, s.index))


def _encode_curve(frames, bezier, cube_bits, gcfg, acfg, tau_steps,
                  first_frame, say, log_every):
    T = len(frames)
    P = bezier.control_points
    cube_sets = [build_cube_set(f, cube_bits) for f in frames]
    say(f"frames {first_frame}..{first_frame + T - 1}: training curve, P={P}")
    rng = make_rng(gcfg.seed, first_frame, NET_GEOMETRY)
    res = train_geometry_group(frames, cube_sets, gcfg, control_points=P,
                               rng=rng, log_every=log_every)
    g_q = [_quantized(c, gcfg.arch, gcfg.step_size) for c in res.controls]
    sections = [Section(SECTION_GEOMETRY, 0, i, encode_indices(idx))
                for i, (idx, _) in enumerate(g_q)]
    g_hat = [h for _, h in g_q]
    codes, recons, logs = [], [], []
    for t, (f, cs) in enumerate(zip(frames, cube_sets)):
        code, rec = _fit_threshold(bezier_sample(g_hat, t, T), cs, f,
                                   tau_steps)
        codes.append(code)
        recons.append(rec)
        logs.append(FrameLog(first_frame + t, code_to_tau(code), len(f),
                             len(rec), res.losses if t == 0 else []))
        sections.append(Section(SECTION_CUBES, t, 0,
                                encode_cube_map(cs.cubes, cube_bits)))
    if acfg is not None:
        targets = [build_color_targets(r, f) for r, f in zip(recons, frames)]
        arng = make_rng(acfg.seed, first_frame, NET_ATTRIBUTES)
        ares = train_attribute_group(targets, acfg,
                                     sum(len(f) for f in frames),
                                     control_points=P, rng=arng,
                                     log_every=log_every)
        a_q = [_quantized(c, acfg.arch, acfg.step_size)
               for c in ares.controls]
        sections += [Section(SECTION_ATTRIBUTES, 0, i, encode_indices(idx))
                     for i, (idx, _) in enumerate(a_q)]
        a_hat = [h for _, h in a_q]
        recons = [reconstruct_attributes(bezier_sample(a_hat, t, T), r)
                  for t, r in enumerate(recons)]
        logs[0].attribute_losses = ares.losses
    for lg in logs:
        say(f"frame {lg.frame}: tau={lg.tau:.6f} "
            f"points {lg.points} -> {lg.reconstructed_points}")
    return codes, recons, logs, _ordered(sections)


def _encode_joint(frames, cube_bits, gcfg, acfg, tau_steps, first_frame,
                  say, log_every):
    T = len(frames)
    cube_sets = [build_cube_set(f, cube_bits) for f in frames]
    say(f"frames {first_frame}..{first_frame + T - 1}: training 4D network")
    rng = make_rng(gcfg.seed, first_frame, NET_GEOMETRY)
    res = train_geometry_group(frames, cube_sets, gcfg, joint=True, rng=rng,
                               log_every=log_every)
    g_idx, g_hat = _quantized(res.controls[0], gcfg.arch, gcfg.step_size)
    sections = [Section(SECTION_GEOMETRY, 0, 0, encode_indices(g_idx))]
    codes, recons, logs = [], [], []
    for t, (f, cs) in enumerate(zip(frames, cube_sets)):
        code, rec = _fit_threshold(g_hat, cs, f, tau_steps, t, T)
        codes.append(code)
        recons.append(rec)
        logs.append(FrameLog(first_frame + t, code_to_tau(code), len(f),
                             len(rec), res.losses if t == 0 else []))
        sections.append(Section(SECTION_CUBES, t, 0,
                                encode_cube_map(cs.cubes, cube_bits)))
    if acfg is not None:
        # colors come from the nearest point of the same frame
        targets = [build_color_targets(r, f) for r, f in zip(recons, frames)]
        arng = make_rng(acfg.seed, first_frame, NET_ATTRIBUTES)
        ares = train_attribute_group(targets, acfg,
                                     sum(len(f) for f in frames), joint=True,
                                     rng=arng, log_every=log_every)
        a_idx, a_hat = _quantized(ares.controls[0], acfg.arch,
                                  acfg.step_size)
        sections.append(Section(SECTION_ATTRIBUTES, 0, 0,
                                encode_indices(a_idx)))
        recons = [reconstruct_attributes(a_hat, r, t, T)
                  for t, r in enumerate(recons)]
        logs[0].attribute_losses = ares.losses
    for lg in logs:
        say(f"frame {lg.frame}: tau={lg.tau:.6f} "
            f"points {lg.points} -> {lg.reconstructed_points}")
    return codes, recons, logs, _ordered(sections)


# --------------------------------------------------------------------------
# decoder

def _read_params(stream, kind, arch, step, frame=0, index=0, base=None):
    payload = stream.find(kind, frame, index)
    idx = decode_indices(payload, arch.num_params)
    if base is not None:
        idx = base + idx
    return idx, NetworkParams(arch, idx * step)


def decode_group(data) -> DecodedGroup:
    """Reconstruct every frame of a container (bytes or parsed stream)."""
    stream = data if isinstance(data, CodedStream) else disassemble(data)
    h = stream.header
    T, n, m = h.group_size, h.resolution_bits, h.cube_bits
    grid = GridParams(n, m)
    taus = h.thresholds
    colored = h.has_attributes
    temporal = h.geometry_arch.input_dim == 4
    cube_sets = [CubeSet(grid, decode_cube_map(
        stream.find(SECTION_CUBES, t), m)) for t in range(T)]

    geo, attr = [], []
    if h.mode == "curve":
        P = h.control_points
        gc = [_read_params(stream, SECTION_GEOMETRY, h.geometry_arch,
                           h.geometry_step, 0, i)[1] for i in range(P)]
        geo = [bezier_sample(gc, t, T) for t in range(T)]
        if colored:
            ac = [_read_params(stream, SECTION_ATTRIBUTES, h.attribute_arch,
                               h.attribute_step, 0, i)[1] for i in range(P)]
            attr = [bezier_sample(ac, t, T) for t in range(T)]
    elif temporal:
        g = _read_params(stream, SECTION_GEOMETRY, h.geometry_arch,
                         h.geometry_step)[1]
        geo = [g] * T
        if colored:
            a = _read_params(stream, SECTION_ATTRIBUTES, h.attribute_arch,
                             h.attribute_step)[1]
            attr = [a] * T
    else:
        residual = h.mode == "residual"
        g_base = a_base = None
        for t in range(T):
            g_base, g = _read_params(stream, SECTION_GEOMETRY,
                                     h.geometry_arch, h.geometry_step, t, 0,
                                     g_base if residual else None)
            geo.append(g)
            if colored:
                a_base, a = _read_params(stream, SECTION_ATTRIBUTES,
                                         h.attribute_arch, h.attribute_step,
                                         t, 0, a_base if residual else None)
                attr.append(a)

    frames = []
    for t in range(T):
        ft = t if temporal else None
        vox, prob = occupancy_probabilities(geo[t], cube_sets[t], ft, T)
        rec = threshold_points(vox, prob, taus[t], n)
        if colored and len(rec):
            rec = reconstruct_attributes(attr[t], rec, ft, T)
        frames.append(rec)
    return DecodedGroup(frames, h)


def encode_static(cloud: VoxelizedCloud, geometry: GeomTrainConfig,
                  attributes: Optional[AttrTrainConfig] = None,
                  transform: Optional[VoxelTransform] = None,
                  **kwargs) -> EncodeResult:
    """Single-cloud convenience wrapper (an intra group of one frame)."""
    group = FrameGroup([cloud], transform or VoxelTransform())
    return encode_group(group, DynamicMode("intra"), geometry, attributes,
                        **kwargs)
