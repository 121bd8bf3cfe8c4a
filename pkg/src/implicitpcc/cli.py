"""Command-line interface: encode, decode, eval and inspect.

Exit codes: 0 success, 2 usage error, 3 input error, 4 encode failure,
5 corrupt stream.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from pathlib import Path

from . import __version__
from .attributes import ATTRIBUTE_ARCH, AttrTrainConfig
from .bitstream.arith import BitstreamExhaustedError, ModelDesyncError
from .bitstream.container import (ContainerError, disassemble, header_bytes,
                                  section_table_size)
from .dynamic import (BezierConfig, DynamicMode, FrameGroup, decode_group,
                      encode_group, split_groups)
from .geometry import (GEOMETRY_ARCH, EmptyReconstructionError,
                       GeomTrainConfig, SamplingRatioError)
from .metrics import average_reports, evaluate
from .nn.network import NetworkArch
from .pointcloud import (PlyError, parse_ply, voxelize_sequence,
                         voxelize_with, write_ply)

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_ENCODE, EXIT_STREAM = 0, 2, 3, 4, 5


class InputError(Exception):
    pass


# defaults for every encode option; config files and flags override them
ENCODE_DEFAULTS = {
    "mode": "static",
    "resolution_bits": 10,
    "cube_bits": 5,
    "lam": 1.0,
    "geometry_steps": 1_200_000,
    "attribute_steps": 800_000,
    "steps_scale": 1.0,
    "batch_size": 4096,
    "beta": 0.5,
    "gamma": 2.0,
    "geometry_step_size": 1 / 1024,
    "attribute_step_size": 1 / 4096,
    "hidden_width": GEOMETRY_ARCH.hidden_width,
    "block_width": GEOMETRY_ARCH.block_width,
    "geometry_blocks": GEOMETRY_ARCH.residual_blocks,
    "attribute_blocks": ATTRIBUTE_ARCH.residual_blocks,
    "levels": GEOMETRY_ARCH.levels_spatial,
    "temporal_levels": 4,
    "omega0": ATTRIBUTE_ARCH.omega0,
    "group_size": 32,
    "control_points": 3,
    "threshold_steps": 30,
    "seed": 0,
    "geometry_only": False,
    "fresh_init": False,
    "workers": os.cpu_count() or 1,
}

_INT_KEYS = {"resolution_bits", "cube_bits", "geometry_steps",
             "attribute_steps", "batch_size", "hidden_width", "block_width",
             "geometry_blocks", "attribute_blocks", "levels",
             "temporal_levels", "group_size", "control_points",
             "threshold_steps", "seed", "workers"}
_BOOL_KEYS = {"geometry_only", "fresh_init"}


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read config file {path}: {exc}")
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "lambda":
            key = "lam"
        if key not in ENCODE_DEFAULTS:
            raise InputError(f"{path}:{n}: unknown key {key!r}")
        out[key] = _coerce(key, value, f"{path}:{n}")
    return out


def _coerce(key, value, where):
    try:
        if key in _BOOL_KEYS:
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if key in _INT_KEYS:
            return int(value)
        if key == "mode":
            return value
        return _fraction(value)
    except ValueError:
        raise InputError(f"{where}: bad value {value!r} for {key}")


def _fraction(text: str) -> float:
    if "/" in text:
        a, b = text.split("/", 1)
        return float(a) / float(b)
    return float(text)


def resolve_encode_options(args) -> dict:
    """Defaults, then the config file, then explicit flags."""
    opts = dict(ENCODE_DEFAULTS)
    if args.config:
        opts.update(read_config_file(args.config))
    for key in ENCODE_DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            opts[key] = value
    return opts


def _say(msg):
    print(msg, file=sys.stderr, flush=True)


def _read_ply(path):
    try:
        with open(path, "rb") as fh:
            return parse_ply(fh.read())
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}")
    except PlyError as exc:
        raise InputError(f"{path}: {exc}")


def _configs(opts):
    scale = opts["steps_scale"]
    if not scale > 0:
        raise InputError("steps-scale must be positive")
    garch = NetworkArch(levels_spatial=opts["levels"],
                        residual_blocks=opts["geometry_blocks"],
                        hidden_width=opts["hidden_width"],
                        block_width=opts["block_width"], activation="relu")
    aarch = NetworkArch(levels_spatial=opts["levels"],
                        residual_blocks=opts["attribute_blocks"],
                        hidden_width=opts["hidden_width"],
                        block_width=opts["block_width"], output_dim=3,
                        activation="sine", omega0=opts["omega0"])
    gcfg = GeomTrainConfig(
        lam=opts["lam"], steps=max(1, round(opts["geometry_steps"] * scale)),
        batch_size=opts["batch_size"], beta=opts["beta"],
        gamma=opts["gamma"], seed=opts["seed"],
        step_size=opts["geometry_step_size"], arch=garch)
    acfg = AttrTrainConfig(
        lam=opts["lam"], steps=max(1, round(opts["attribute_steps"] * scale)),
        batch_size=opts["batch_size"], seed=opts["seed"],
        step_size=opts["attribute_step_size"], arch=aarch)
    return gcfg, acfg


def _mode(opts):
    name = opts["mode"]
    if name == "static":
        name = "intra"
    bez = BezierConfig(opts["control_points"]) if name == "curve" else None
    return DynamicMode(name, bez, opts["temporal_levels"],
                       opts["fresh_init"])


def _group_paths(output: Path, count: int) -> list:
    if count == 1:
        return [output]
    return [output.with_name(f"{output.stem}.g{k:03d}{output.suffix}")
            for k in range(count)]


def cmd_encode(args) -> int:
    opts = resolve_encode_options(args)
    for key in sorted(opts):
        _say(f"config {key} = {opts[key]}")
    try:
        mode = _mode(opts)
        gcfg, acfg = _configs(opts)
    except ValueError as exc:
        raise InputError(str(exc))
    if opts["mode"] == "static" and len(args.inputs) != 1:
        raise InputError("static mode takes exactly one input cloud")
    raws = [_read_ply(p) for p in args.inputs]
    try:
        frames, transform = voxelize_sequence(raws, opts["resolution_bits"])
    except ValueError as exc:
        raise InputError(str(exc))
    colored = all(f.has_colors for f in frames)
    if not colored and any(f.has_colors for f in frames):
        raise InputError("either all or none of the inputs must have colors")
    attr = None if (opts["geometry_only"] or not colored) else acfg
    groups = split_groups(frames, opts["group_size"])
    paths = _group_paths(Path(args.output), len(groups))
    log_lines = []
    first = 0
    for gi, (frames_g, path) in enumerate(zip(groups, paths)):
        result = encode_group(
            FrameGroup(frames_g, transform), mode, gcfg, attr,
            cube_bits=opts["cube_bits"],
            threshold_steps=opts["threshold_steps"], first_frame=first,
            workers=opts["workers"], log=_say,
            log_every=max(1, gcfg.steps // 20))
        path.write_bytes(result.data)
        _say(f"wrote {path} ({len(result.data)} bytes)")
        log_lines += _encode_log(gi, path, result)
        first += len(frames_g)
    log_path = Path(args.log) if args.log else Path(str(args.output) + ".log")
    log_path.write_text("\n".join(log_lines) + "\n")
    return EXIT_OK


def _encode_log(gi, path, result):
    lines = [f"group={gi} file={path} bytes={len(result.data)} "
             f"seconds={result.seconds:.3f}"]
    for name, bits, share in section_shares(result.data):
        lines.append(f"group={gi} section={name} bits={bits} "
                     f"share={share:.4f}")
    for lg in result.logs:
        lines.append(f"group={gi} frame={lg.frame} tau={lg.tau:.8f} "
                     f"points={lg.points} "
                     f"reconstructed_points={lg.reconstructed_points}")
        for step, loss in lg.geometry_losses:
            lines.append(f"group={gi} frame={lg.frame} net=geometry "
                         f"step={step} loss={loss:.6g}")
        for step, loss in lg.attribute_losses:
            lines.append(f"group={gi} frame={lg.frame} net=attributes "
                         f"step={step} loss={loss:.6g}")
    return lines


def _load_stream(path):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}")
    return data, disassemble(data)


def cmd_decode(args) -> int:
    frames, transform = [], None
    for path in args.streams:
        data, stream = _load_stream(path)
        dec = decode_group(stream)
        frames += dec.frames
        transform = dec.transform
    out = Path(args.output)
    if len(frames) == 1 and out.suffix.lower() == ".ply":
        targets = [out]
    else:
        out.mkdir(parents=True, exist_ok=True)
        targets = [out / f"frame_{k:04d}.ply" for k in range(len(frames))]
    for frame, target in zip(frames, targets):
        target.write_bytes(write_ply(
            frame, None if transform.is_identity else transform))
        _say(f"wrote {target} ({len(frame)} points)")
    return EXIT_OK


def section_shares(data: bytes) -> list:
    """``(name, bits, share)`` rows covering every byte of the stream.

    Rows: header, section table, one per section kind, and a final
    ``cubes+tau`` row with the combined auxiliary share.
    """
    stream = disassemble(data)
    total = 8 * len(data)
    head = header_bytes(stream.header)
    tau_bits = 16 * stream.header.group_size
    rows = [("header", 8 * len(head)),
            ("section_table", 8 * section_table_size(len(stream.sections)))]
    kinds = {}
    for s in stream.sections:
        kinds[s.name] = kinds.get(s.name, 0) + 8 * len(s.payload)
    rows += sorted(kinds.items())
    out = [(name, bits, bits / total) for name, bits in rows]
    aux = kinds.get("cubes", 0) + tau_bits
    out.append(("cubes+tau", aux, aux / total))
    return out


def cmd_inspect(args) -> int:
    data, stream = _load_stream(args.stream)
    h = stream.header
    print(f"magic=INPC version={h.version} mode={h.mode}")
    print(f"resolution_bits={h.resolution_bits} cube_bits={h.cube_bits} "
          f"group_size={h.group_size} control_points={h.control_points}")
    for label, arch, step in (("geometry", h.geometry_arch, h.geometry_step),
                              ("attributes", h.attribute_arch,
                               h.attribute_step)):
        if arch is None:
            print(f"{label}=absent")
            continue
        print(f"{label}: input_dim={arch.input_dim} "
              f"levels={arch.levels_spatial}/{arch.levels_temporal} "
              f"blocks={arch.residual_blocks} hidden={arch.hidden_width} "
              f"block={arch.block_width} out={arch.output_dim} "
              f"activation={arch.activation} omega0={arch.omega0} "
              f"layer_norm={arch.layer_norm} params={arch.num_params} "
              f"step={step!r}")
    print(f"scale={h.scale} offset={h.offset}")
    print("tau=" + ",".join(f"{t:.6f}" for t in h.thresholds))
    print(f"total_bits={8 * len(data)}")
    for s in stream.sections:
        print(f"section {s.name} frame={s.frame} index={s.index} "
              f"bits={8 * len(s.payload)}")
    for name, bits, share in section_shares(data):
        print(f"share {name} bits={bits} percent={100 * share:.2f}")
    return EXIT_OK


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.6f}"
    return str(v)


FIELDS = ("d1_psnr", "d2_psnr", "y_psnr", "yuv_psnr", "bpp", "points",
          "reconstructed_points")


def cmd_eval(args) -> int:
    if bool(args.reconstructed) == bool(args.streams):
        raise InputError("give either --reconstructed files or --streams")
    raws = [_read_ply(p) for p in args.original]
    if args.streams:
        decoded, bits, group_sizes = [], [], []
        for path in args.streams:
            data, stream = _load_stream(path)
            dec = decode_group(stream)
            decoded += dec.frames
            bits.append(8 * len(data))
            group_sizes.append(len(dec.frames))
        n = dec.header.resolution_bits
        transform = dec.transform
        if len(decoded) != len(raws):
            raise InputError(f"{len(raws)} originals but the streams hold "
                             f"{len(decoded)} frames")
        originals = [voxelize_with(r, n, transform) for r in raws]
        recon = decoded
    else:
        n = args.resolution_bits
        if len(args.reconstructed) != len(raws):
            raise InputError(f"{len(raws)} originals but "
                             f"{len(args.reconstructed)} reconstructions")
        originals, transform = voxelize_sequence(raws, n)
        recon = [voxelize_with(_read_ply(p), n, transform)
                 for p in args.reconstructed]
    reports = [evaluate(r, o, with_d2=not args.no_d2)
               for r, o in zip(recon, originals)]
    total_bits = None
    if args.streams:
        # frames of one group share its stream; charge it to the group
        k = 0
        for b, size in zip(bits, group_sizes):
            pts = sum(reports[k + i].points for i in range(size))
            for i in range(size):
                reports[k + i].bpp = b / pts
            k += size
        total_bits = sum(bits)
    agg = average_reports(reports, total_bits)
    lines = [" ".join([f"frame={k}"] + [f"{f}={_fmt(getattr(r, f))}"
                                         for f in FIELDS])
             for k, r in enumerate(reports)]
    lines.append(" ".join(["frame=all"] + [f"{f}={_fmt(getattr(agg, f))}"
                                           for f in FIELDS]))
    if args.streams:
        aux = sum(section_shares(Path(p).read_bytes())[-1][1]
                  for p in args.streams)
        lines.append(f"cubes_tau_bits={aux} "
                     f"cubes_tau_share={aux / total_bits:.6f}")
    text = "\n".join(lines) + "\n"
    if args.report:
        Path(args.report).write_text(text)
    else:
        sys.stdout.write(text)
    if args.csv:
        _write_csv(args.csv, reports, agg, args.label)
    return EXIT_OK


def _write_csv(path, reports, agg, label):
    new = not Path(path).exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["label", "frame", *FIELDS])
        for k, r in enumerate(reports):
            w.writerow([label, k, *(_fmt(getattr(r, f)) for f in FIELDS)])
        w.writerow([label, "all", *(_fmt(getattr(agg, f)) for f in FIELDS)])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="implicitpcc",
        description="Point cloud codec built on overfitted coordinate "
                    "networks.")
    p.add_argument("--version", action="version",
                   version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("encode", help="compress one cloud or a sequence")
    e.add_argument("inputs", nargs="+", help="PLY file(s), in frame order")
    e.add_argument("-o", "--output", required=True,
                   help="stream path; sequences of several groups get a "
                        ".gNNN suffix per group")
    e.add_argument("--config", help="key = value file with encode options")
    e.add_argument("--log", help="encoder log path (default OUTPUT.log)")
    e.add_argument("--mode", choices=("static", "intra", "residual", "curve",
                                      "fourD"))
    e.add_argument("-N", "--resolution-bits", dest="resolution_bits",
                   type=int)
    e.add_argument("-M", "--cube-bits", dest="cube_bits", type=int)
    e.add_argument("--lambda", dest="lam", type=float,
                   help="L1 strength for both networks")
    e.add_argument("--geometry-steps", dest="geometry_steps", type=int)
    e.add_argument("--attribute-steps", dest="attribute_steps", type=int)
    e.add_argument("--steps-scale", dest="steps_scale", type=float,
                   help="multiply both step counts (0.25 for a quarter)")
    e.add_argument("--batch-size", dest="batch_size", type=int)
    e.add_argument("--beta", type=float)
    e.add_argument("--gamma", type=float)
    e.add_argument("--geometry-step-size", dest="geometry_step_size",
                   type=_fraction)
    e.add_argument("--attribute-step-size", dest="attribute_step_size",
                   type=_fraction)
    e.add_argument("--hidden-width", dest="hidden_width", type=int)
    e.add_argument("--block-width", dest="block_width", type=int)
    e.add_argument("--geometry-blocks", dest="geometry_blocks", type=int)
    e.add_argument("--attribute-blocks", dest="attribute_blocks", type=int)
    e.add_argument("--levels", type=int, help="spatial encoding levels")
    e.add_argument("--temporal-levels", dest="temporal_levels", type=int)
    e.add_argument("--omega0", type=float)
    e.add_argument("--group-size", dest="group_size", type=int)
    e.add_argument("--control-points", dest="control_points", type=int)
    e.add_argument("--threshold-steps", dest="threshold_steps", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--geometry-only", dest="geometry_only",
                   action="store_const", const=True)
    e.add_argument("--fresh-init", dest="fresh_init", action="store_const",
                   const=True,
                   help="residual mode: do not start from the previous frame")
    e.add_argument("--workers", type=int,
                   help="parallel frames in intra mode (default: all cores)")
    e.set_defaults(func=cmd_encode)

    d = sub.add_parser("decode", help="reconstruct PLY files from streams")
    d.add_argument("streams", nargs="+")
    d.add_argument("-o", "--output", required=True,
                   help="PLY path for a single frame, else a directory")
    d.set_defaults(func=cmd_decode)

    v = sub.add_parser("eval", help="quality and rate report")
    v.add_argument("--original", nargs="+", required=True)
    v.add_argument("--reconstructed", nargs="+")
    v.add_argument("--streams", nargs="+")
    v.add_argument("-N", "--resolution-bits", dest="resolution_bits",
                   type=int, default=10,
                   help="grid bits when comparing PLY files")
    v.add_argument("--report", help="key=value report path (default stdout)")
    v.add_argument("--csv", help="append per-frame rows to this CSV")
    v.add_argument("--label", default="", help="CSV label column")
    v.add_argument("--no-d2", action="store_true", help="skip D2 PSNR")
    v.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect", help="dump header and section sizes")
    i.add_argument("stream")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        _say(f"error: {exc}")
        return EXIT_INPUT
    except (EmptyReconstructionError, SamplingRatioError) as exc:
        _say(f"encode failed: {exc}")
        return EXIT_ENCODE
    except (ContainerError, BitstreamExhaustedError,
            ModelDesyncError) as exc:
        _say(f"corrupt stream: {exc}")
        return EXIT_STREAM


if __name__ == "__main__":
    sys.exit(main())
