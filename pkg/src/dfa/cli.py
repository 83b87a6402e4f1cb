"""Command-line pipeline: ODF or tensor volumes to peaks, OO/OD maps,
frames and distortion maps.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import ast
import json
import operator
import sys
from pathlib import Path

import numpy as np

from . import distortion, frames, nifti, order, sphere, synth, tfa
from ._parallel import chunked_map

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


class CLIError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


class NumericalError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError(EXIT_USAGE, f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# argument helpers

_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv}


def parse_angle(text):
    """Evaluate a small arithmetic expression in ``pi`` (e.g. ``pi/2``)."""

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id == "pi":
            return float(np.pi)
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub):
            return -ev(node.operand)
        raise ValueError(text)

    try:
        return ev(ast.parse(str(text), mode="eval"))
    except (SyntaxError, ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"invalid angle expression {text!r}")


def _triple(kind):
    def parse(text):
        try:
            vals = [kind(v) for v in str(text).split(",")]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected three comma-separated values, got {text!r}")
        if len(vals) != 3:
            raise argparse.ArgumentTypeError(f"expected three comma-separated values, got {text!r}")
        return tuple(vals)

    return parse


def _pair(text):
    try:
        vals = [float(v) for v in str(text).split(",")]
    except ValueError:
        vals = []
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated values, got {text!r}")
    return tuple(vals)


# ---------------------------------------------------------------------------
# volume helpers


def _load(path, accepted, flag):
    """Read a volume whose tag starts with one of ``accepted``."""
    try:
        header, data = nifti.read_volume(path)
    except nifti.NiftiError as exc:
        raise CLIError(EXIT_IO, f"{path}: {exc}")
    except OSError as exc:
        raise CLIError(EXIT_IO, str(exc))
    tag = header.tag
    ok = any(tag == a or (a.endswith(":") and tag.startswith(a)) for a in accepted)
    if not ok:
        want = " or ".join(a + "L" if a == "sh:" else a + "K" if a == "peaks:" else a for a in accepted)
        raise CLIError(EXIT_USAGE, f"{flag} expects a volume tagged {want}, got {tag or 'untagged'!r}")
    if data.ndim == 3 and tag not in ("scalar", "mask"):
        data = data[..., None]
    return header, data


def _save(path, data, tag, spacing):
    try:
        nifti.write_volume(path, data, tag, spacing)
    except OSError as exc:
        raise CLIError(EXIT_IO, f"cannot write {path}: {exc.strerror or exc}")


def _first_voxel(bad):
    return tuple(int(i) for i in np.argwhere(bad)[0])


def _check_finite(data, what):
    bad = ~np.all(np.isfinite(data.reshape(data.shape[:3] + (-1,))), axis=-1)
    if bad.any():
        raise NumericalError(f"non-finite {what} at voxel {_first_voxel(bad)}")


def tensor_volume_to_sh(t6, L=sphere.DEFAULT_ORDER):
    """SH coefficients of the tensor ODF per voxel; all-zero voxels stay zero."""
    _check_finite(t6, "tensor")
    D = tfa.six_to_matrix(t6)
    present = np.any(t6 != 0, axis=-1)
    lam = np.linalg.eigvalsh(D[present])
    bad = np.zeros(present.shape, dtype=bool)
    bad[present] = lam[:, 0] <= 0
    if bad.any():
        raise NumericalError(f"tensor is not positive definite at voxel {_first_voxel(bad)}")
    C = np.zeros(t6.shape[:3] + (sphere.n_coeffs(L),))
    if present.any():
        C[present] = chunked_map(lambda block: sphere.tensors_to_sh(block, L), D[present], chunk=2048)
    return C


def _peaks_from_sh(C, gfa_thresh, peak_ratio, max_peaks):
    _check_finite(C, "SH coefficients")
    flat = C.reshape(-1, C.shape[-1])
    mesh = sphere.default_mesh()
    dirs, vals = chunked_map(
        lambda block: sphere.find_peaks(block, mesh, gfa_thresh, peak_ratio, max_peaks), flat, chunk=2048
    )
    shape = C.shape[:3]
    return dirs.reshape(shape + (max_peaks, 3)), vals.reshape(shape + (max_peaks,))


def _pack_peaks(dirs, vals):
    return np.concatenate([dirs, vals[..., None]], axis=-1).reshape(dirs.shape[:3] + (-1,))


def _unpack_peaks(data):
    K = data.shape[-1] // 4
    block = data.reshape(data.shape[:3] + (K, 4))
    return block[..., :3], block[..., 3]


def _frames_from_volume(data, spacing):
    u = data.reshape(data.shape[:3] + (3, 3))
    has1 = np.linalg.norm(u[..., 0, :], axis=-1) > 0
    has2 = np.linalg.norm(u[..., 1, :], axis=-1) > 0
    state = np.where(has1 & has2, frames.FULL, np.where(has1, frames.PARTIAL, frames.ABSENT)).astype(np.uint8)
    return frames.FrameField(u, state, spacing)


def _check_range(name, value, lo, hi):
    if not lo <= value <= hi:
        raise CLIError(EXIT_USAGE, f"{name} must lie in [{lo}, {hi}], got {value}")


def _report(rows, figure, maps):
    from .plotting import format_summary, render_maps

    print(format_summary(rows))
    if figure:
        try:
            render_maps(figure, maps)
        except OSError as exc:
            raise CLIError(EXIT_IO, f"cannot write {figure}: {exc}")


# ---------------------------------------------------------------------------
# subcommands


def cmd_peaks(args):
    _check_range("--gfa-thresh", args.gfa_thresh, 0.0, 1.0)
    _check_range("--peak-ratio", args.peak_ratio, 0.0, 1.0)
    if args.max_peaks < 1:
        raise CLIError(EXIT_USAGE, "--max-peaks must be at least 1")
    header, data = _load(args.inp, ["sh:", "tensor6"], "--in")
    C = tensor_volume_to_sh(data) if header.tag == "tensor6" else data
    dirs, vals = _peaks_from_sh(C, args.gfa_thresh, args.peak_ratio, args.max_peaks)
    _save(args.out, _pack_peaks(dirs, vals), f"peaks:{args.max_peaks}", header.spacing)


def cmd_oo_od(args):
    _check_range("--gfa-thresh", args.gfa_thresh, 0.0, 1.0)
    if (args.inp is None) == (args.tensor is None):
        raise CLIError(EXIT_USAGE, "give exactly one of --in or --tensor")
    if args.inp is not None:
        header, C = _load(args.inp, ["sh:"], "--in")
    else:
        header, t6 = _load(args.tensor, ["tensor6"], "--tensor")
        C = tensor_volume_to_sh(t6)
    _check_finite(C, "SH coefficients")
    maps = order.oo_od_maps(C, args.gfa_thresh)
    sp = header.spacing
    _save(args.out_oo, maps.oo, "scalar", sp)
    _save(args.out_od, maps.od, "scalar", sp)
    if args.out_mask:
        _save(args.out_mask, maps.mask.astype(np.uint8), "mask", sp)
    from .plotting import map_summary

    rows = [map_summary("oo", maps.oo, maps.mask), map_summary("od", maps.od, maps.mask)]
    _report(rows, args.figure, {"OO": maps.oo, "OD": maps.od})


def _build_frames(peaks_field, args):
    if args.sigma <= 0 or args.radius < 0:
        raise CLIError(EXIT_USAGE, "--sigma must be positive and --radius non-negative")
    return frames.frame_field(peaks_field, sigma=args.sigma, radius=args.radius, mode=args.mode)


def cmd_frames(args):
    header, data = _load(args.peaks, ["peaks:"], "--peaks")
    _check_finite(data, "peak")
    dirs, vals = _unpack_peaks(data)
    ff = _build_frames(frames.PeakField(dirs, vals, header.spacing), args)
    _save(args.out, ff.u.reshape(ff.dims + (9,)), "frame9", header.spacing)
    out = Path(args.out)
    stem = out.name[: -len(".nii")] if out.name.endswith(".nii") else out.name
    _save(out.with_name(stem + "_mask.nii"), ff.state, "mask", header.spacing)


def cmd_distortion(args):
    if (args.frames is None) == (args.tensor is None):
        raise CLIError(EXIT_USAGE, "give exactly one of --frames or --tensor")
    if args.frames is not None:
        header, data = _load(args.frames, ["frame9"], "--frames")
        _check_finite(data, "frame")
        ff = _frames_from_volume(data, header.spacing)
    else:
        header, t6 = _load(args.tensor, ["tensor6"], "--tensor")
        C = tensor_volume_to_sh(t6)
        dirs, vals = _peaks_from_sh(C, args.gfa_thresh, sphere.PEAK_RATIO, 3)
        ff = _build_frames(frames.PeakField(dirs, vals, header.spacing), args)
    if args.window is not None and args.window <= 0:
        raise CLIError(EXIT_USAGE, "--window must be positive")
    maps = distortion.distortion_maps(ff, args.scheme, args.spacing_normalize, args.window)
    for name, vol in maps.as_dict().items():
        if not np.all(np.isfinite(vol)):
            raise NumericalError(f"non-finite {name} at voxel {_first_voxel(~np.isfinite(vol))}")
    sp = header.spacing
    for name, vol in maps.as_dict().items():
        _save(f"{args.out_prefix}{name}.nii", vol, "scalar", sp)
    _save(f"{args.out_prefix}mask.nii", maps.mask, "mask", sp)
    from .plotting import map_summary

    valid = maps.valid
    rows = [map_summary(name, vol, valid) for name, vol in maps.as_dict().items()]
    _report(rows, args.figure, maps.as_dict())


def cmd_tfa(args):
    header, t6 = _load(args.inp, ["tensor6"], "--in")
    _check_finite(t6, "tensor")
    field = tfa.TensorField(tfa.six_to_matrix(t6), header.spacing)
    if args.op == "grad-norm":
        out, tag = tfa.gradient_norm(tfa.gradient_field(field)), "scalar"
    elif args.op == "md-grad":
        out, tag = tfa.mean_diffusivity_gradient(tfa.gradient_field(field)), "vector3"
    else:
        out, tag = tfa.structure4_map(field), "scalar"
    _save(args.out, out, tag, header.spacing)


def cmd_synth(args):
    try:
        spec = synth.SyntheticSpec(
            kind=args.kind,
            dims=args.dims,
            spacing=args.spacing,
            angle=args.angle,
            mode_range=args.mode_range,
        )
    except ValueError as exc:
        raise CLIError(EXIT_USAGE, str(exc))
    field = synth.generate(spec)
    t6 = tfa.matrix_to_six(field.tensors)
    _save(args.out, t6, "tensor6", spec.spacing)
    if args.out_sh:
        _save(args.out_sh, field.sh(args.sh_order), f"sh:{args.sh_order}", spec.spacing)
    if args.out_mask:
        _save(args.out_mask, field.mask.astype(np.uint8), "mask", spec.spacing)


# ---------------------------------------------------------------------------
# parser


def build_parser():
    p = _Parser(prog="dfa", description="Director field analysis of ODF and tensor volumes.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_text, parents=()):
        sp = sub.add_parser(name, help=help_text, description=help_text, parents=list(parents))
        sp.add_argument("--config", help="JSON file whose keys set defaults for this command's flags")
        sp.set_defaults(func=func)
        return sp

    frame_opts = argparse.ArgumentParser(add_help=False)
    frame_opts.add_argument("--sigma", type=float, default=1.0, help="Gaussian width in voxels")
    frame_opts.add_argument("--radius", type=int, default=1, help="neighbourhood cube radius in voxels")
    frame_opts.add_argument("--mode", choices=["director", "vector-mean", "vector-max"], default="director")

    sp = add("peaks", cmd_peaks, "Detect ODF peaks per voxel.")
    sp.add_argument("--in", dest="inp", required=True, help="SH (sh:L) or tensor (tensor6) volume")
    sp.add_argument("--gfa-thresh", type=float, default=sphere.GFA_THRESHOLD)
    sp.add_argument("--peak-ratio", type=float, default=sphere.PEAK_RATIO)
    sp.add_argument("--max-peaks", type=int, default=3)
    sp.add_argument("--out", required=True)

    sp = add("oo-od", cmd_oo_od, "Orientational order and dispersion along the principal peak.")
    sp.add_argument("--in", dest="inp", help="SH volume (sh:L)")
    sp.add_argument("--tensor", help="tensor volume (tensor6), converted to tensor ODFs")
    sp.add_argument("--out-oo", required=True)
    sp.add_argument("--out-od", required=True)
    sp.add_argument("--out-mask")
    sp.add_argument("--gfa-thresh", type=float, default=sphere.GFA_THRESHOLD)
    sp.add_argument("--figure", help="PNG file with the middle-slice maps")

    sp = add("frames", cmd_frames, "Local orthogonal frames from a peak volume.", [frame_opts])
    sp.add_argument("--peaks", required=True)
    sp.add_argument("--out", required=True)

    sp = add("distortion", cmd_distortion, "Splay, bend, twist and total distortion maps.", [frame_opts])
    sp.add_argument("--frames", help="frame volume (frame9)")
    sp.add_argument("--tensor", help="tensor volume (tensor6), routed through ODF peaks and frames")
    sp.add_argument("--gfa-thresh", type=float, default=sphere.GFA_THRESHOLD)
    sp.add_argument("--spacing-normalize", action="store_true", help="report angles per mm")
    sp.add_argument("--window", type=float, help="physical window in mm for multi-step differences")
    sp.add_argument("--scheme", choices=list(distortion.SCHEMES), default="limit")
    sp.add_argument("--out-prefix", required=True)
    sp.add_argument("--figure", help="PNG file with the middle-slice maps")

    sp = add("tfa", cmd_tfa, "Tensor field analysis maps.")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--op", choices=["grad-norm", "md-grad", "structure4"], required=True)
    sp.add_argument("--out", required=True)

    sp = add("synth", cmd_synth, "Generate a synthetic tensor field.")
    sp.add_argument("--kind", choices=list(synth.KINDS), required=True)
    sp.add_argument("--dims", type=_triple(int), default=(32, 16, 3))
    sp.add_argument("--spacing", type=_triple(float), default=(1.0, 1.0, 1.0))
    sp.add_argument("--angle", type=parse_angle, default=None, help="total rotation, e.g. pi or pi/2")
    sp.add_argument("--mode-range", type=_pair, default=(0.0, 0.0))
    sp.add_argument("--out", required=True)
    sp.add_argument("--out-sh")
    sp.add_argument("--sh-order", type=int, default=sphere.DEFAULT_ORDER)
    sp.add_argument("--out-mask")
    return p, sub


def _config_path(argv):
    """``--config`` value from raw argv, found before the full parse."""
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _apply_config(parser, sub, argv):
    argv = list(sys.argv[1:] if argv is None else argv)
    path = _config_path(argv)
    command = next((a for a in argv if a in sub.choices), None)
    if path is None or command is None:
        return parser.parse_args(argv)
    try:
        cfg = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CLIError(EXIT_IO, f"cannot read config {path}: {exc.strerror or exc}")
    except json.JSONDecodeError as exc:
        raise CLIError(EXIT_USAGE, f"invalid JSON in {path}: {exc}")
    if not isinstance(cfg, dict):
        raise CLIError(EXIT_USAGE, "config must be a JSON object")
    sp = sub.choices[command]
    known = {a.dest: a for a in sp._actions}
    defaults = {}
    for key, value in cfg.items():
        dest = key.lstrip("-").replace("-", "_")
        dest = "inp" if dest == "in" else dest
        if dest not in known or dest in ("help", "config"):
            raise CLIError(EXIT_USAGE, f"unknown config key {key!r} for {command}")
        action = known[dest]
        if action.choices is not None and value not in action.choices:
            raise CLIError(EXIT_USAGE, f"config key {key!r} must be one of {list(action.choices)}")
        if action.type is not None and not isinstance(value, bool):
            value = action.type(",".join(map(str, value)) if isinstance(value, list) else str(value))
        defaults[dest] = value
        action.required = False
    sp.set_defaults(**defaults)
    return parser.parse_args(argv)


def run(argv=None):
    parser, sub = build_parser()
    try:
        args = _apply_config(parser, sub, argv)
        if args.command == "synth" and args.sh_order % 2:
            raise CLIError(EXIT_USAGE, "--sh-order must be even")
        args.func(args)
    except CLIError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code
    except argparse.ArgumentTypeError as exc:
        print(f"dfa: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"dfa: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except np.linalg.LinAlgError as exc:
        print(f"dfa: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
