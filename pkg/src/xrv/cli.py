"""Command-line pipeline: phantoms, projections, databases, reconstruction.

One executable with a subcommand per pipeline stage.  Numeric parameters
resolve as built-in default < config file < flag; the config file is
plain ``key = value`` lines with ``#`` comments.  Logs go to stderr and
data only to explicitly named files; nothing is written when validation
fails.  Exit codes: 0 success, 2 usage or validation error, 1 runtime
failure (I/O, malformed container).
"""

from __future__ import annotations

import argparse
import os
import sys

from .evaluate import resolution_study
from .forward import downsample_y, project_y, simulate_scout
from .grids import (
    FormatError,
    ProjectionImage,
    ValidationError,
    read_image,
    read_volume,
    write_image,
    write_pgm,
    write_volume,
)
from .inference import voxelize
from .phantoms import gen_phantom
from .training import PatchSpec, build_index, extract_pairs, read_index, write_index

DEFAULTS = {
    "ellipsoids": 6,
    "p": 5,
    "h": 4,
    "stride": 4,
    "k": 8,
    "epsilon": 1e-6,
    "lambda": 1.0,
    "modes": 1,
    "enforce": True,
    "max_sweeps": 50,
    "peak": 1000.0,
}


def _log(msg):
    print(msg, file=sys.stderr)


def parse_config(path) -> dict:
    """Read a flat ``key = value`` config file; ``#`` starts a comment."""
    cfg = {}
    with open(path, "r", encoding="utf-8") as fp:
        for lineno, line in enumerate(fp, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            cfg[key.strip()] = value.strip()
    return cfg


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"cannot parse boolean from {text!r}")


def _parse_int_list(text):
    parts = text.replace(",", " ").split()
    return [int(p) for p in parts]


class _Params:
    """Resolves each parameter as flag > config file > built-in default."""

    def __init__(self, args):
        self.args = args
        self.cfg = parse_config(args.config) if getattr(args, "config", None) else {}

    def get(self, key, cast, attr=None):
        attr = attr or key
        value = getattr(self.args, attr, None)
        if value is not None:
            return value
        if key in self.cfg:
            raw = self.cfg[key]
            if cast is bool:
                return _parse_bool(raw)
            return cast(raw)
        if key not in DEFAULTS:
            raise ValidationError(f"missing required parameter '{key}'")
        return DEFAULTS[key]

    def spec(self) -> PatchSpec:
        return PatchSpec(
            p=self.get("p", int),
            h=self.get("h", int),
            stride=self.get("stride", int),
            k=self.get("k", int),
            epsilon=self.get("epsilon", float),
        )


def _load_volume(path):
    with open(path, "rb") as fp:
        return read_volume(fp)


def _load_image(path):
    with open(path, "rb") as fp:
        return read_image(fp)


def _save(path, writer, obj):
    with open(path, "wb") as fp:
        n = writer(obj, fp)
    _log(f"wrote {path} ({n} bytes)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xrv",
        description="x-ray voxelization pipeline (phantoms, projection, "
                    "patch database, reconstruction, evaluation)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="key=value config file (flags override it)")
        return sp

    sp = add("phantom", "generate a deterministic ellipsoid phantom volume")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--dims", type=int, nargs=3, metavar=("NX", "NY", "NZ"))
    sp.add_argument("--ellipsoids", type=int)
    sp.add_argument("--out", required=True, help="output .xrv path")

    sp = add("project", "project a volume along y into an image")
    sp.add_argument("--in", dest="infile", required=True, help="input .xrv path")
    sp.add_argument("--out", required=True, help="output .xri path")

    sp = add("downsample", "block-mean downsample a volume along y")
    sp.add_argument("--in", dest="infile", required=True, help="input .xrv path")
    sp.add_argument("--factor", type=int, required=True)
    sp.add_argument("--out", required=True, help="output .xrv path")

    sp = add("scout", "block-mean downsample an image in x and z")
    sp.add_argument("--in", dest="infile", required=True, help="input .xri path")
    sp.add_argument("--factor", type=int, required=True)
    sp.add_argument("--out", required=True, help="output .xri path")

    sp = add("build-db", "extract patch pairs from training volumes into a database")
    sp.add_argument("--train", nargs="+", required=True, help="training .xrv paths")
    sp.add_argument("--p", type=int)
    sp.add_argument("--h", type=int)
    sp.add_argument("--stride", type=int)
    sp.add_argument("--k", type=int)
    sp.add_argument("--epsilon", type=float)
    sp.add_argument("--out", required=True, help="output .xrd path")

    sp = add("voxelize", "reconstruct mode volumes from an image and a database")
    sp.add_argument("--image", required=True, help="input .xri path")
    sp.add_argument("--db", required=True, help="input .xrd path")
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--modes", type=int, help="number of alternative modes")
    sp.add_argument("--enforce", action=argparse.BooleanOptionalAction, default=None)
    sp.add_argument("--max-sweeps", dest="max_sweeps", type=int)
    sp.add_argument("--outdir", required=True,
                    help="directory for mode_<j>.xrv and diagnostics.txt")

    sp = add("modes", "list ranked mode energies without writing volumes")
    sp.add_argument("--image", required=True, help="input .xri path")
    sp.add_argument("--db", required=True, help="input .xrd path")
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--modes", type=int)
    sp.add_argument("--enforce", action=argparse.BooleanOptionalAction, default=None)
    sp.add_argument("--max-sweeps", dest="max_sweeps", type=int)
    sp.add_argument("--out", required=True, help="output text path")

    sp = add("evaluate", "run the stack-height study over a train/test corpus")
    sp.add_argument("--train", nargs="+", required=True, help="training .xrv paths")
    sp.add_argument("--test", nargs="+", required=True, help="test .xrv paths")
    sp.add_argument("--heights", type=int, nargs="+")
    sp.add_argument("--p", type=int)
    sp.add_argument("--stride", type=int)
    sp.add_argument("--k", type=int)
    sp.add_argument("--epsilon", type=float)
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--peak", type=float)
    sp.add_argument("--max-sweeps", dest="max_sweeps", type=int)
    sp.add_argument("--out", required=True, help="output .csv path")

    sp = add("export-pgm", "render a volume (per-y slices) or image to binary PGM")
    sp.add_argument("--in", dest="infile", required=True, help=".xrv or .xri path")
    sp.add_argument("--lo", type=float, help="intensity mapped to black (default: data min)")
    sp.add_argument("--hi", type=float, help="intensity mapped to white (default: data max)")
    sp.add_argument("--out", required=True,
                    help="output path (.xri input) or filename prefix (.xrv input)")

    return parser


def cmd_phantom(args, params):
    dims = args.dims
    if dims is None:
        if "dims" in params.cfg:
            dims = _parse_int_list(params.cfg["dims"])
            if len(dims) != 3:
                raise ValidationError(f"dims needs 3 entries, got {dims}")
        else:
            raise ValidationError("missing required parameter 'dims'")
    vol = gen_phantom(args.seed, dims, params.get("ellipsoids", int))
    _save(args.out, write_volume, vol)


def cmd_project(args, params):
    img = project_y(_load_volume(args.infile))
    _save(args.out, write_image, img)


def cmd_downsample(args, params):
    out = downsample_y(_load_volume(args.infile), args.factor)
    _save(args.out, write_volume, out)


def cmd_scout(args, params):
    out = simulate_scout(_load_image(args.infile), args.factor)
    _save(args.out, write_image, out)


def cmd_build_db(args, params):
    spec = params.spec()
    pairs = []
    for vol_id, path in enumerate(args.train):
        pairs.extend(extract_pairs(_load_volume(path), spec, volume_id=vol_id))
    index = build_index(pairs, spec)
    _log(f"extracted {len(index)} pairs from {len(args.train)} volumes")
    _save(args.out, write_index, index)


def _run_voxelize(args, params):
    img = _load_image(args.image)
    with open(args.db, "rb") as fp:
        index = read_index(fp)
    return voxelize(
        img,
        index,
        lam=params.get("lambda", float, attr="lam"),
        n_modes=params.get("modes", int),
        enforce=params.get("enforce", bool),
        max_sweeps=params.get("max_sweeps", int),
    )


def _mode_lines(result):
    lines = []
    cfg = result.config
    lines.append(
        "config: lambda=%.9g modes=%d enforce=%s p=%d h=%d stride=%d k=%d"
        % (cfg["lambda"], cfg["n_modes"], cfg["enforce"], cfg["p"], cfg["h"],
           cfg["stride"], cfg["k"])
    )
    for j, ((_, energy), (before, after)) in enumerate(zip(result.modes, result.diagnostics)):
        lines.append(
            "mode %d: energy=%.9g residual_before=%.9g residual_after=%.9g"
            % (j, energy, before, after)
        )
    return lines


def cmd_voxelize(args, params):
    result = _run_voxelize(args, params)
    os.makedirs(args.outdir, exist_ok=True)
    for j, (vol, _) in enumerate(result.modes):
        _save(os.path.join(args.outdir, f"mode_{j}.xrv"), write_volume, vol)
    diag_path = os.path.join(args.outdir, "diagnostics.txt")
    with open(diag_path, "w", encoding="utf-8") as fp:
        fp.write("\n".join(_mode_lines(result)) + "\n")
    _log(f"wrote {diag_path}")


def cmd_modes(args, params):
    result = _run_voxelize(args, params)
    with open(args.out, "w", encoding="utf-8") as fp:
        fp.write("\n".join(_mode_lines(result)) + "\n")
    _log(f"wrote {args.out}")


def cmd_evaluate(args, params):
    heights = args.heights
    if heights is None:
        if "heights" in params.cfg:
            heights = _parse_int_list(params.cfg["heights"])
        else:
            raise ValidationError("missing required parameter 'heights'")
    spec = params.spec()
    train = [_load_volume(p) for p in args.train]
    test = [_load_volume(p) for p in args.test]
    report = resolution_study(
        train,
        test,
        heights,
        spec=spec,
        lam=params.get("lambda", float, attr="lam"),
        peak=params.get("peak", float),
        max_sweeps=params.get("max_sweeps", int),
    )
    csv_text = report.to_csv()
    with open(args.out, "w", encoding="utf-8", newline="") as fp:
        fp.write(csv_text)
    _log(f"wrote {args.out} ({len(report.rows)} rows)")


def cmd_export_pgm(args, params):
    with open(args.infile, "rb") as fp:
        magic = fp.read(4)
        fp.seek(0)
        if magic == b"XRV1":
            vol = read_volume(fp)
            img = None
        elif magic == b"XRI1":
            vol = None
            img = read_image(fp)
        else:
            raise FormatError(f"{args.infile}: unrecognized magic {magic!r}")

    data = vol.data if vol is not None else img.data
    lo = args.lo if args.lo is not None else float(data.min())
    hi = args.hi if args.hi is not None else float(data.max())
    if args.lo is None and args.hi is None and lo == hi:
        hi = lo + 1.0
    if not lo < hi:
        raise ValidationError(f"require lo < hi, got lo={lo}, hi={hi}")

    if img is not None:
        with open(args.out, "wb") as fp:
            n = write_pgm(img, lo, hi, fp)
        _log(f"wrote {args.out} ({n} bytes)")
        return
    sx, _, sz = vol.spacing
    for y in range(vol.ny):
        sl = ProjectionImage(data=vol.data[:, y, :], spacing=(sx, sz))
        path = f"{args.out}_y{y:03d}.pgm"
        with open(path, "wb") as fp:
            write_pgm(sl, lo, hi, fp)
    _log(f"wrote {vol.ny} slices to {args.out}_y*.pgm")


_COMMANDS = {
    "phantom": cmd_phantom,
    "project": cmd_project,
    "downsample": cmd_downsample,
    "scout": cmd_scout,
    "build-db": cmd_build_db,
    "voxelize": cmd_voxelize,
    "modes": cmd_modes,
    "evaluate": cmd_evaluate,
    "export-pgm": cmd_export_pgm,
}


def run(argv) -> int:
    """Parse and execute one invocation; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        params = _Params(args)
        _COMMANDS[args.command](args, params)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
