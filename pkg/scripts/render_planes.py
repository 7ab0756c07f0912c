"""Render the mid-plane slices written by ``dideeponet plot-data`` as PNGs.

    python3 scripts/render_planes.py PLOT_DIR [--out figures]

Needs matplotlib, which the package itself does not depend on. One figure
per slice; truth and prediction share a color scale when both exist.
"""

import argparse
import csv
import os

import numpy as np

from dideeponet.npyio import read_npy


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("plot_dir")
    ap.add_argument("--out", default=None, help="output directory (default: PLOT_DIR)")
    args = ap.parse_args(argv)
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = args.out or args.plot_dir
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(args.plot_dir, "manifest.csv"), newline="") as fh:
        rows = list(csv.DictReader(fh))
    slices = {r["file"][:-4]: read_npy(os.path.join(args.plot_dir, r["file"])) for r in rows}
    for name, arr in slices.items():
        qty = name.split("_", 1)[1]
        pair = [slices[k] for k in (f"truth_{qty}", f"pred_{qty}") if k in slices]
        lo, hi = min(a.min() for a in pair), max(a.max() for a in pair)
        fig, ax = plt.subplots(figsize=(4, 4))
        # rows are x, columns are z; show x horizontally
        im = ax.imshow(arr.T, origin="lower", extent=(0, 2, 0, 2), vmin=lo, vmax=hi, cmap="RdBu_r")
        ax.set_xlabel("x")
        ax.set_ylabel("z")
        ax.set_title(f"{name} (sample {rows[0]['sample']}, Re {float(rows[0]['reynolds']):g})")
        fig.colorbar(im, ax=ax, shrink=0.8)
        fig.savefig(os.path.join(out, name + ".png"), dpi=120, bbox_inches="tight")
        plt.close(fig)
        print(os.path.join(out, name + ".png"))


if __name__ == "__main__":
    main()
