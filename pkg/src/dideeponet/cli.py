"""Command-line entry point: ``dideeponet <subcommand> ...``.

Exit codes: 0 success, 1 runtime or numerical failure, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import dataset, fem, geometry, metrics, operators, trainer
from .errors import (ConfigurationError, FormatError, NumericalError, UsageError,
                     ValidationError)
from .losses import LOSS_IDS, LossWeights
from .npyio import write_npy

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("dideeponet")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def _int_list(text):
    if isinstance(text, (list, tuple)):
        return tuple(int(x) for x in text)
    try:
        return tuple(int(x) for x in str(text).split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _resolution(text):
    G = int(text)
    if G < 8:
        raise argparse.ArgumentTypeError(f"resolution must be >= 8, got {G}")
    return G


# Run-config keys: name -> (type, default, help). Every key doubles as a flag.
TRAIN_KEYS = {
    "loss": (str, "L1", f"training loss, one of {', '.join(LOSS_IDS)}"),
    "model": (str, "deeponet", "operator variant: deeponet or geometric"),
    "split": (str, "random", "train/test split: random or extrapolatory"),
    "train_fraction": (float, 0.8, "fraction of samples used for training"),
    "epochs": (int, 200, "training epochs"),
    "learning_rate": (float, 1e-4, "Adam learning rate"),
    "batch_size": (int, 2, "samples per optimizer step"),
    "seed": (int, 0, "seed for splits, initialization and shuffling"),
    "checkpoint_interval": (int, 0, "also checkpoint every N epochs (0: best and final only)"),
    "validation_fraction": (float, 0.1, "share of the training set held out for validation"),
    "subsample": (int, -1, "elements per step (-1: full grid up to 32^3 else 8192; 0: full grid)"),
    "beta1": (float, 0.9, "Adam beta1"),
    "beta2": (float, 0.999, "Adam beta2"),
    "adam_eps": (float, 1e-8, "Adam epsilon"),
    "branch_layers": (_int_list, (512, 512, 512), "branch hidden widths"),
    "trunk_layers": (_int_list, (256, 256, 256), "trunk hidden widths"),
    "stage2_layers": (_int_list, (256, 256, 256), "stage-2 hidden widths (geometric)"),
    "modes": (int, 128, "latent modes p"),
    "pool": (int, 8, "SDF pooling target per axis for the branch input"),
    "omega0": (float, 30.0, "SIREN frequency of the stage-2 trunk"),
    "normalize_boundary": (bool, False, "divide boundary sums by their node counts"),
    "data": (str, None, "dataset prefix (<prefix>_X.npz / <prefix>_Y.npz)"),
    "synthetic": (bool, False, "train on a generated manufactured-flow dataset"),
    "samples": (int, 16, "synthetic sample count"),
    "resolution": (int, 16, "synthetic grid resolution G"),
    "out": (str, "run", "output directory"),
}
_WEIGHT_DEFAULTS = LossWeights(h=1.0)
for _k in LossWeights.keys():
    if _k != "normalize_boundary":
        TRAIN_KEYS[f"weight_{_k}"] = (float, getattr(_WEIGHT_DEFAULTS, _k), f"loss weight lambda_{_k}")


def _add_run_flags(p):
    p.add_argument("--config", help="TOML run configuration; flags override its values")
    for key, (typ, default, text) in TRAIN_KEYS.items():
        flag = "--" + key.replace("_", "-")
        help_text = f"{text} (default: {default})"
        if typ is bool:
            p.add_argument(flag, dest=key, action="store_const", const=True, default=None, help=help_text)
        elif key == "loss":
            p.add_argument(flag, dest=key, choices=LOSS_IDS, default=None, help=help_text)
        elif key == "model":
            p.add_argument(flag, dest=key, choices=operators.VARIANTS, default=None, help=help_text)
        elif key == "split":
            p.add_argument(flag, dest=key, choices=("random", "extrapolatory"), default=None, help=help_text)
        else:
            p.add_argument(flag, dest=key, type=typ, default=None, help=help_text)


def load_run_config(args):
    """Merge defaults, the optional TOML file, then explicit flags."""
    values = {k: v[1] for k, v in TRAIN_KEYS.items()}
    if getattr(args, "config", None):
        try:
            with open(args.config, "rb") as fh:
                table = tomllib.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"{args.config}: {exc}") from None
        unknown = sorted(set(table) - set(TRAIN_KEYS))
        if unknown:
            raise ConfigurationError(f"{args.config}: unknown keys {unknown}")
        for k, v in table.items():
            typ = TRAIN_KEYS[k][0]
            values[k] = v if typ is bool else typ(v)
    for k in TRAIN_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            values[k] = v
    if values["loss"] not in LOSS_IDS:
        raise ConfigurationError(f"loss must be one of {', '.join(LOSS_IDS)}, got {values['loss']!r}")
    return values


def _configs(values):
    op = operators.OperatorConfig(
        variant=values["model"], branch_layers=values["branch_layers"],
        trunk_layers=values["trunk_layers"], stage2_layers=values["stage2_layers"],
        modes=values["modes"], pool=values["pool"], siren_omega0=values["omega0"])
    sub = values["subsample"]
    tc = trainer.TrainConfig(
        loss=values["loss"], epochs=values["epochs"], learning_rate=values["learning_rate"],
        batch_size=values["batch_size"], seed=values["seed"],
        checkpoint_interval=values["checkpoint_interval"],
        validation_fraction=values["validation_fraction"],
        subsample_elements=None if sub < 0 else sub,
        beta1=values["beta1"], beta2=values["beta2"], eps=values["adam_eps"])
    weights = {k: values[f"weight_{k}"] for k in LossWeights.keys() if k != "normalize_boundary"}
    weights["normalize_boundary"] = bool(values["normalize_boundary"])
    return op, tc, weights


def _load_data(values_or_args):
    get = values_or_args.get if isinstance(values_or_args, dict) else lambda k: getattr(values_or_args, k, None)
    if get("synthetic"):
        return dataset.synth_dataset(get("samples"), get("resolution"), seed=get("seed") or 0)
    if not get("data"):
        raise UsageError("give --data PREFIX or --synthetic")
    paths = dataset.dataset_paths(get("data"))
    for p in paths:
        if not os.path.exists(p):
            raise UsageError(f"dataset file not found: {p}")
    return dataset.read_dataset(*paths)


# ---------------------------------------------------------------- subcommands

def cmd_geomgen(args):
    os.makedirs(args.out, exist_ok=True)
    catalog = geometry.build_catalog(args.seed)
    with open(os.path.join(args.out, "catalog.json"), "w") as fh:
        json.dump([s.to_dict() for s in catalog], fh, indent=1)
    for i, spec in enumerate(catalog):
        stem = os.path.join(args.out, f"shape_{i:03d}_{spec.kind}")
        mesh = geometry.triangulate(spec, args.subdivisions)
        geometry.validate_mesh(mesh)
        geometry.write_stl(mesh, stem + ".stl")
        sdf = geometry.mesh_sdf(mesh, args.resolution, threads=args.threads)
        write_npy(stem + "_sdf.npy", sdf.grid)
        log.info("wrote %s (.stl, _sdf.npy)", stem)
    return EXIT_OK


def _parent_dir(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def cmd_voxelize(args):
    if not os.path.exists(args.stl):
        raise UsageError(f"STL file not found: {args.stl}")
    mesh = geometry.read_stl(args.stl)
    sdf = geometry.mesh_sdf(mesh, args.resolution, threads=args.threads)
    _parent_dir(args.out)
    write_npy(args.out, sdf.grid)
    return EXIT_OK


def cmd_synth(args):
    ds = dataset.synth_dataset(args.samples, args.resolution, seed=args.seed)
    _parent_dir(args.out)
    dataset.write_dataset(ds, args.out, float32=args.float32)
    print("\n".join(dataset.dataset_paths(args.out)))
    return EXIT_OK


def cmd_split(args):
    ds = _load_data(args)
    spec = dataset.SplitSpec(args.kind, args.train_fraction, args.seed)
    train, test = dataset.split(ds, spec)
    _parent_dir(args.out)
    dataset.write_split_manifest(args.out, ds.reynolds, train, test)
    return EXIT_OK


def cmd_train(args):
    values = load_run_config(args)
    op, tc, weights = _configs(values)
    ds = _load_data(values)
    spec = dataset.SplitSpec(values["split"], values["train_fraction"], values["seed"])
    train_idx, test_idx = dataset.split(ds, spec)
    out = values["out"]
    os.makedirs(out, exist_ok=True)
    dataset.write_split_manifest(os.path.join(out, "split.csv"), ds.reynolds, train_idx, test_idx)
    extra = {"split": spec.kind, "test": [int(i) for i in test_idx],
             "data": values["data"] if not values["synthetic"] else
             {"synthetic": True, "samples": values["samples"], "resolution": values["resolution"]}}
    try:
        result = trainer.train(ds, train_idx, tc, op, weights, checkpoint_dir=out, metadata=extra)
    except trainer.TrainingDiverged as exc:
        log.error("%s (last good checkpoint: %s)", exc, exc.checkpoint)
        raise
    result.history.write_csv(os.path.join(out, "history.csv"))
    print(os.path.join(out, "final.npz"))
    return EXIT_OK


def _eval_dataset(args, ck):
    if args.data or args.synthetic:
        return _load_data(args)
    src = ck.metadata.get("data")
    if isinstance(src, dict) and src.get("synthetic"):
        return dataset.synth_dataset(src["samples"], src["resolution"], seed=ck.metadata.get("seed", 0))
    if isinstance(src, str):
        return _load_data({"data": src})
    raise UsageError("checkpoint does not record its dataset; pass --data or --synthetic")


def cmd_eval(args):
    reports = []
    for path in args.checkpoint:
        if not os.path.exists(path):
            raise UsageError(f"checkpoint not found: {path}")
    for path in args.checkpoint:
        ck = operators.load_checkpoint(path)
        ds = _eval_dataset(args, ck)
        if args.split:
            kind = args.split
            _, test = dataset.split(ds, dataset.SplitSpec(kind, args.train_fraction, ck.metadata.get("seed", 0)))
        else:
            kind = ck.metadata.get("split", "random")
            test = np.array(ck.metadata.get("test", np.arange(ds.n_samples)), dtype=np.int64)
        rep = trainer.evaluate(ck.params, ck.config, ds, test, ck.metadata.get("loss", "L1"), kind,
                               ck.metadata.get("resolution"))
        reports.append(rep)
    text = metrics.reports_to_csv(reports) if args.format == "csv" else metrics.format_table(reports)
    if args.unified:
        lines = [f"unified_score {r.model} {r.loss} {r.split} {r.unified():.3f}" for r in reports]
        if args.format != "csv":
            text += "\n".join(lines) + "\n"
    if args.out:
        _parent_dir(args.out)
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_score(args):
    print(f"{metrics.unified_score(args.m1, args.m2, args.m3, args.m4, tuple(args.weights), args.penalty):.3f}")
    return EXIT_OK


def plane_index(G):
    """Mid-plane index along y (floor convention)."""
    return G // 2


def export_plane(field: fem.NodalField, sdf, prefix, out_dir):
    """XZ mid-plane slices of u, v, w, the 9 gradient components and their Frobenius norm.

    Velocities are nodal slices at y-index G//2. Gradients are element-center
    values on element layer min(G//2, G-2).
    """
    G = field.G
    j = plane_index(G)
    je = min(j, G - 2)
    written = []
    for name, comp in zip("uvw", field.components()):
        written.append((f"{prefix}_{name}", comp[:, j, :]))
    grads = np.stack([fem.grid_center_gradients(c, field.h) for c in field.components()])
    sq = np.zeros_like(grads[0, 0][:, je, :])
    for n in range(3):
        for d in range(3):
            sl = grads[n, d][:, je, :]
            sq += sl * sl
            written.append((f"{prefix}_d{'uvw'[n]}d{'xyz'[d]}", sl))
    written.append((f"{prefix}_grad_frobenius", np.sqrt(sq)))
    rows = []
    for name, arr in written:
        path = os.path.join(out_dir, name + ".npy")
        write_npy(path, np.ascontiguousarray(arr))
        rows.append((name + ".npy", arr.shape[0], arr.shape[1]))
    return rows, j, je


def cmd_plot_data(args):
    os.makedirs(args.out, exist_ok=True)
    ck = None
    if args.checkpoint:
        if not os.path.exists(args.checkpoint):
            raise UsageError(f"checkpoint not found: {args.checkpoint}")
        ck = operators.load_checkpoint(args.checkpoint)
        ds = _eval_dataset(args, ck)
    else:
        ds = _load_data(args)
    i = args.sample
    if not 0 <= i < ds.n_samples:
        raise UsageError(f"sample {i} out of range [0, {ds.n_samples})")
    rows, j, je = export_plane(ds.velocity(i), ds.sdf(i), "truth", args.out)
    if ck is not None:
        pred = operators.predict(ck.params, ck.config, ds.sdf(i), ds.reynolds[i])
        rows += export_plane(pred, ds.sdf(i), "pred", args.out)[0]
    with open(os.path.join(args.out, "manifest.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["file", "rows_x", "cols_z", "sample", "reynolds", "node_plane_y", "element_plane_y"])
        for name, nx, nz in rows:
            w.writerow([name, nx, nz, i, repr(float(ds.reynolds[i])), j, je])
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    parser = argparse.ArgumentParser(prog="dideeponet", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads for geometry kernels (default: DIDEEPONET_THREADS or CPU count)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("geomgen", help="generate the shape catalog as STL meshes and SDF grids")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=_resolution, default=32, help="SDF grid resolution G (>= 8)")
    p.add_argument("--subdivisions", type=int, default=geometry.ELLIPSOID_SUBDIVISIONS)
    p.set_defaults(func=cmd_geomgen)

    p = sub.add_parser("voxelize", help="signed distance grid of a binary STL mesh")
    p.add_argument("--stl", required=True)
    p.add_argument("--resolution", type=_resolution, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser("synth", help="write a manufactured-flow dataset")
    p.add_argument("--samples", type=int, default=16)
    p.add_argument("--resolution", type=_resolution, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output prefix; writes <out>_X.npz and <out>_Y.npz")
    p.add_argument("--float32", action="store_true", help="store 4-byte floats")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="write a train/test split manifest")
    _add_data_flags(p)
    p.add_argument("--kind", choices=("random", "extrapolatory"), default="random")
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train an operator")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate checkpoints (M1-M4)")
    p.add_argument("--checkpoint", action="append", required=True, help="checkpoint file (repeatable)")
    _add_data_flags(p)
    p.add_argument("--split", choices=("random", "extrapolatory"), default=None,
                   help="recompute the test set with this split instead of the checkpoint's")
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--format", choices=("table", "csv"), default="table")
    p.add_argument("--unified", action="store_true", help="append the unified score per row")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="unified score from M1-M4 values")
    for m in ("m1", "m2", "m3", "m4"):
        p.add_argument(f"--{m}", type=float, required=True)
    p.add_argument("--weights", type=float, nargs=3, default=[1 / 3, 1 / 3, 1 / 3])
    p.add_argument("--penalty", type=float, default=100.0)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("plot-data", help="export XZ mid-plane slices as NPY plus a manifest")
    p.add_argument("--checkpoint", default=None)
    _add_data_flags(p)
    p.add_argument("--sample", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot_data)
    return parser


def _add_data_flags(p):
    p.add_argument("--data", default=None, help="dataset prefix")
    p.add_argument("--synthetic", action="store_true")
    p.add_argument("--samples", type=int, default=16)
    p.add_argument("--resolution", type=_resolution, default=16)
    p.add_argument("--seed", type=int, default=0)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return EXIT_USAGE
        os.environ["DIDEEPONET_THREADS"] = str(args.threads)
    try:
        return args.func(args)
    except (UsageError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, ValidationError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
