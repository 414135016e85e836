"""Command-line interface.

Every subcommand writes its artifacts to disk and prints a JSON summary on
stdout. Exit status is 0 on success, 1 on usage or input errors and 2 on
numerical failures; diagnostics go to stderr as JSON.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .basis import build_basis, motion_tangents, shape_tangents
from .container import load_basis, save_basis
from .discrepancy import VarifoldConfig
from .errors import (BesaError, ConnectivityError, DimensionError, MeshParseError,
                     RankDeficiencyError, SolverError)
from .evaluation import eval_reconstruction, pair_metrics
from .generation import GMMModel, fit_gmm, sample_shape, transfer_motion, velocity_samples
from .geodesics import (ScheduleConfig, geodesic_between_codes, retrieve_latent, solve_bvp,
                        solve_ivp)
from .latent import LatentCode, LatentPath, linear_interpolate
from .mesh import list_mesh_files, load_mesh, save_mesh
from .metric import MetricParams

# failures caused by the inputs rather than by a numerical solve
_INPUT_ERRORS = (MeshParseError, ConnectivityError, DimensionError, RankDeficiencyError,
                 FileNotFoundError, IsADirectoryError, NotADirectoryError,
                 json.JSONDecodeError, KeyError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _emit(obj, stream=None):
    stream = sys.stdout if stream is None else stream
    stream.write(json.dumps(obj, default=_json_default) + "\n")
    stream.flush()


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"{type(o).__name__} is not JSON serializable")


def _range(text, name):
    try:
        a, b = (float(v) for v in text.split(":"))
    except ValueError:
        raise UsageError(f"--{name} expects START:END, got {text!r}") from None
    return a, b


def _schedule(args):
    try:
        return _make_schedule(args)
    except ValueError as exc:
        raise UsageError(f"schedule: {exc}") from None


def _make_schedule(args):
    return ScheduleConfig.geometric(
        sigma=_range(args.sigma_schedule, "sigma-schedule"),
        lam=_range(args.lambda_schedule, "lambda-schedule"),
        n_stages=args.stages, T=args.steps, max_iter=args.max_iter, grad_tol=args.grad_tol,
    )


def _metric(args):
    try:
        return MetricParams.parse(args.metric)
    except ValueError as exc:
        raise UsageError(f"--metric: {exc}") from None


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, default=_json_default))


def _code_from_json(obj, basis):
    """Accepts ``{"pose", "shape"}``, ``{"code": [...]}`` or ``{"velocity": [...]}``."""
    if "pose" in obj and "shape" in obj:
        vec = LatentCode.from_json(obj).vector
    elif "code" in obj:
        vec = np.asarray(obj["code"], dtype=np.float64)
    elif "velocity" in obj:
        vec = np.asarray(obj["velocity"], dtype=np.float64)
    else:
        raise KeyError("expected keys 'pose'/'shape', 'code' or 'velocity'")
    if vec.shape != (basis.dim,):
        raise DimensionError(f"code has length {vec.size}, basis dimension is {basis.dim}")
    return vec


def _is_mesh(path):
    return Path(path).suffix.lower() in (".obj", ".ply")


def _write_frames(basis, path: LatentPath, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for t, code in enumerate(path.codes):
        f = out_dir / f"frame_{t:04d}.obj"
        save_mesh(basis.decode(code), f)
        files.append(str(f))
    _write_json(out_dir / "path.json", path.to_json())
    return files


def _numerical_failure(message, report):
    raise SolverError(message, report=report)


# -- subcommands -------------------------------------------------------------

def cmd_build_basis(args):
    template = load_mesh(args.template)

    def sequences(root):
        root = Path(root)
        dirs = sorted(p for p in root.iterdir() if p.is_dir())
        if not dirs:
            raise MeshParseError("no sequence subdirectories found", path=root)
        return [[load_mesh(f) for f in list_mesh_files(d)] for d in dirs]

    motions = motion_tangents(sequences(args.motions), template, args.velocity_scale)
    shapes = shape_tangents(sequences(args.shapes), template, args.velocity_scale)
    basis, info = build_basis(motions, shapes, args.n, args.m, template, center=args.center)
    info.update(motion_samples=len(motions), shape_samples=len(shapes), center=args.center)
    save_basis(basis, args.out, info={"center": args.center,
                                      "velocity_scale": args.velocity_scale,
                                      "motion_samples": len(motions),
                                      "shape_samples": len(shapes)})
    if args.report_dir:
        from .plotting import plot_spectrum

        rd = Path(args.report_dir)
        rd.mkdir(parents=True, exist_ok=True)
        ps, ss = info["pose_singular_values"], info["shape_singular_values"]
        with open(rd / "spectrum.csv", "w") as fh:
            fh.write("component,pose,shape\n")
            for i in range(max(len(ps), len(ss))):
                a = ps[i] if i < len(ps) else ""
                b = ss[i] if i < len(ss) else ""
                fh.write(f"{i + 1},{a},{b}\n")
        plot_spectrum({"pose": ps, "shape": ss}, rd / "spectrum.png")
    _emit({"basis": str(args.out), "V": template.n_vertices, "n": basis.n, "m": basis.m,
           "motion_samples": len(motions), "shape_samples": len(shapes),
           "gram_condition": info["gram_condition"]})


def _history_report(report, report_dir, stem):
    from .plotting import plot_optimizer_history

    rd = Path(report_dir)
    rd.mkdir(parents=True, exist_ok=True)
    with open(rd / f"{stem}.csv", "w") as fh:
        fh.write("stage,iterate,objective\n")
        for s, stage in enumerate(report.stages):
            for i, f in enumerate(stage.history):
                fh.write(f"{s},{i},{f!r}\n")
    plot_optimizer_history(report, rd / f"{stem}.png")


def cmd_retrieve(args):
    params, sched = _metric(args), _schedule(args)
    basis = load_basis(args.basis)
    target = load_mesh(args.target)
    code, mesh, report, path = retrieve_latent(basis, target, params, sched, return_path=True)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = LatentCode.from_vector(code, basis.n).to_json()
    payload["report"] = report.to_dict()
    _write_json(out / "code.json", payload)
    _write_json(out / "path.json", path.to_json())
    save_mesh(mesh, out / "reconstruction.obj")
    if args.report_dir:
        _history_report(report, args.report_dir, "retrieve_history")
    if report.failed:
        _numerical_failure("retrieval aborted", report)
    _emit({"code": str(out / "code.json"), "mesh": str(out / "reconstruction.obj"),
           "path": str(out / "path.json"), "converged": report.converged,
           "wall_time": report.wall_time})


def _endpoint(source, basis):
    """A code from JSON, or a mesh to be matched."""
    if _is_mesh(source):
        return None, load_mesh(source)
    return _code_from_json(_read_json(source), basis), None


def cmd_interpolate(args):
    params, sched = _metric(args), _schedule(args)
    basis = load_basis(args.basis)
    (c0, m0), (c1, m1) = (_endpoint(s, basis) for s in (args.from_, args.to))
    report = None
    if args.mode == "linear":
        # mesh endpoints are first matched by retrieval
        reports = []
        if c0 is None:
            c0, _, r = retrieve_latent(basis, m0, params, sched)
            reports.append(r)
        if c1 is None:
            c1, _, r = retrieve_latent(basis, m1, params, sched)
            reports.append(r)
        if reports:
            report = next((r for r in reports if r.failed), reports[-1])
        path = linear_interpolate(c0, c1, args.steps, n=basis.n)
    elif c0 is not None and c1 is not None:
        path, report = geodesic_between_codes(basis, c0, c1, params, T=args.steps,
                                              max_iter=args.max_iter)
    else:
        q0 = m0 if m0 is not None else basis.decode(c0)
        q1 = m1 if m1 is not None else basis.decode(c1)
        path, report = solve_bvp(basis, q0, q1, params, sched)
    files = _write_frames(basis, path, args.out_dir)
    if report is not None and args.report_dir:
        _history_report(report, args.report_dir, "interpolate_history")
    if report is not None and report.failed:
        _numerical_failure("interpolation aborted", report)
    _emit({"mode": args.mode, "frames": files, "path": str(Path(args.out_dir) / "path.json"),
           "report": None if report is None else report.to_dict()})


def cmd_extrapolate(args):
    params = _metric(args)
    basis = load_basis(args.basis)
    alpha0 = _code_from_json(_read_json(args.code), basis)
    beta = _code_from_json(_read_json(args.velocity), basis)
    path = solve_ivp(basis, alpha0, beta, args.steps, params)
    files = _write_frames(basis, path, args.out_dir)
    _emit({"frames": files, "path": str(Path(args.out_dir) / "path.json")})


def cmd_transfer(args):
    basis = load_basis(args.basis)
    path = LatentPath.from_json(_read_json(args.path))
    if path.codes.shape[1] != basis.dim or path.n != basis.n:
        raise DimensionError("path does not match the basis dimensions")
    target = _code_from_json(_read_json(args.shape_from), basis)[basis.n:]
    moved = transfer_motion(path, target)
    files = _write_frames(basis, moved, args.out_dir)
    _emit({"frames": files, "path": str(Path(args.out_dir) / "path.json")})


def cmd_generate(args):
    params = _metric(args)
    if not args.fit_paths and not (args.gmm_pose and args.gmm_shape):
        raise UsageError("generate needs --gmm-pose and --gmm-shape, or --fit-paths")
    basis = load_basis(args.basis)
    if args.fit_paths:
        paths = [LatentPath.from_json(_read_json(p)) for p in args.fit_paths]
        pose_v, shape_v = velocity_samples(paths)
        gp = fit_gmm(pose_v, args.k_pose, seed=args.seed)
        gs = fit_gmm(shape_v, args.k_shape, seed=args.seed)
        out_dir = Path(args.out).parent
        gp.save(out_dir / "gmm_pose.json")
        gs.save(out_dir / "gmm_shape.json")
    else:
        gp, gs = GMMModel.load(args.gmm_pose), GMMModel.load(args.gmm_shape)
    mesh, beta = sample_shape(basis, gp, gs, args.steps, params, seed=args.seed,
                              return_velocity=True)
    save_mesh(mesh, args.out)
    _emit({"mesh": str(args.out), "seed": args.seed, "velocity": beta})


def cmd_distance(args):
    a, b = load_mesh(args.mesh_a), load_mesh(args.mesh_b)
    rec = pair_metrics(a, b, VarifoldConfig(args.sigma))
    rec["sigma"] = args.sigma
    _emit(rec)


def cmd_eval(args):
    root = Path(args.directory)
    out_dir, gt_dir = root / args.outputs_subdir, root / args.truth_subdir
    outs = {p.name: p for p in list_mesh_files(out_dir)}
    gts = {p.stem: p for p in list_mesh_files(gt_dir)}
    names = sorted(p for p in outs if Path(p).stem in gts)
    if not names:
        raise MeshParseError("no (output, ground truth) pairs with matching names", path=root)
    record = eval_reconstruction([load_mesh(outs[n]) for n in names],
                                 [load_mesh(gts[Path(n).stem]) for n in names],
                                 VarifoldConfig(args.sigma), names=[Path(n).stem for n in names])
    result = record.to_json()
    if args.out:
        _write_json(args.out, result)
    if args.report_dir:
        from .plotting import plot_eval_record

        rd = Path(args.report_dir)
        rd.mkdir(parents=True, exist_ok=True)
        record.write_csv(rd / "metrics.csv")
        plot_eval_record(record, rd / "metrics.png")
    _emit(result)


# -- parser --------------------------------------------------------------------

def _add_metric(p):
    p.add_argument("--metric", default="1,1000,100,1,1,1",
                   help="six metric weights a0,a1,b1,c1,d1,a2")


def _add_schedule(p):
    p.add_argument("--sigma-schedule", default="0.4:0.025", help="kernel width START:END")
    p.add_argument("--lambda-schedule", default="1e2:1e8", help="data weight START:END")
    p.add_argument("--stages", type=int, default=5)
    p.add_argument("--steps", type=int, default=10, help="time steps T of the path")
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--grad-tol", type=float, default=1e-6)


def build_parser():
    parser = _Parser(prog="besa", description="Basis-restricted elastic shape analysis.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("build-basis", help="PCA basis from registered sequences")
    p.add_argument("--template", required=True)
    p.add_argument("--motions", required=True, help="directory of motion sequence folders")
    p.add_argument("--shapes", required=True, help="directory of same-pose identity paths")
    p.add_argument("-n", type=int, default=130, help="pose basis size")
    p.add_argument("-m", type=int, default=40, help="shape basis size")
    p.add_argument("--center", action="store_true", help="center samples before PCA")
    p.add_argument("--velocity-scale", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.add_argument("--report-dir")
    p.set_defaults(func=cmd_build_basis)

    p = sub.add_parser("retrieve", help="latent code of a (pre-aligned) scan")
    p.add_argument("--basis", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--report-dir")
    _add_metric(p)
    _add_schedule(p)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("interpolate", help="path between two codes or meshes")
    p.add_argument("--basis", required=True)
    p.add_argument("--from", dest="from_", required=True, help="code JSON or mesh file")
    p.add_argument("--to", required=True, help="code JSON or mesh file")
    p.add_argument("--mode", choices=("geodesic", "linear"), default="geodesic")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--report-dir")
    _add_metric(p)
    _add_schedule(p)
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("extrapolate", help="geodesic from a code and a velocity")
    p.add_argument("--basis", required=True)
    p.add_argument("--code", required=True)
    p.add_argument("--velocity", required=True)
    p.add_argument("--steps", type=int, default=10, help="number of steps N")
    p.add_argument("--out-dir", required=True)
    _add_metric(p)
    p.set_defaults(func=cmd_extrapolate)

    p = sub.add_parser("transfer", help="re-target a motion path to another shape")
    p.add_argument("--basis", required=True)
    p.add_argument("--path", required=True)
    p.add_argument("--shape-from", required=True, help="code JSON supplying the shape block")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("generate", help="random shape from velocity mixtures")
    p.add_argument("--basis", required=True)
    p.add_argument("--gmm-pose")
    p.add_argument("--gmm-shape")
    p.add_argument("--fit-paths", nargs="+", help="path JSON files to fit the mixtures on")
    p.add_argument("--k-pose", type=int, default=10)
    p.add_argument("--k-shape", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=10, help="number of steps N")
    p.add_argument("--out", required=True)
    _add_metric(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("distance", help="discrepancies between two meshes")
    p.add_argument("mesh_a")
    p.add_argument("mesh_b")
    p.add_argument("--sigma", type=float, default=0.4)
    p.set_defaults(func=cmd_distance)

    p = sub.add_parser("eval", help="metrics over (output, ground truth) pairs")
    p.add_argument("directory")
    p.add_argument("--outputs-subdir", default="outputs")
    p.add_argument("--truth-subdir", default="ground_truth")
    p.add_argument("--sigma", type=float, default=0.4)
    p.add_argument("--out", help="write the record JSON here as well")
    p.add_argument("--report-dir", help="write metrics.csv and metrics.png here")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            raise UsageError("a subcommand is required; see --help")
        args.func(args)
    except UsageError as exc:
        _emit({"error": "UsageError", "message": str(exc)}, sys.stderr)
        return 1
    except _INPUT_ERRORS as exc:
        info = exc.to_dict() if isinstance(exc, BesaError) else {
            "error": type(exc).__name__, "message": str(exc)}
        _emit(info, sys.stderr)
        return 1
    except BesaError as exc:
        _emit(exc.to_dict(), sys.stderr)
        return 2
    except ValueError as exc:
        _emit({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        return 1
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        _emit({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
