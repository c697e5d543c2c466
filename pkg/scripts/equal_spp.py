"""Equal-sample MAPE of BDPT and proxy-BDPT against a reference.

    python3 scripts/equal_spp.py mirror_box --spp 64 --seeds 0 1 2 \
        --reference tests/data/mirror_box_pt_reference.npz

The reference may be a PFM or the npz written by make_reference.py (usable
while that run is still in progress).
"""

import argparse
import json
import time

import numpy as np

from proxybdpt.metrics import mape
from proxybdpt.proxy import render_proxy_bdpt
from proxybdpt.scene import load_shipped
from proxybdpt.transport.imageio import read_pfm
from proxybdpt.transport.render import render_bdpt


def load_reference(path):
    if str(path).endswith(".npz"):
        z = np.load(path)
        return z["total"] / int(z["chunks"])
    return read_pfm(path)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("scene")
    ap.add_argument("--spp", type=int, default=64)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--reference", required=True)
    args = ap.parse_args(argv)

    scene = load_shipped(args.scene)
    ref = load_reference(args.reference)
    rows = []
    for seed in args.seeds:
        row = {"seed": seed}
        for name, fn in (("bdpt", render_bdpt), ("proxy", render_proxy_bdpt)):
            t = time.time()
            res = fn(scene, args.spp, np.random.default_rng([seed, len(name)]))
            row[f"{name}_mape"] = mape(res.image, ref)
            row[f"{name}_s"] = round(time.time() - t, 2)
        row["ratio"] = row["proxy_mape"] / row["bdpt_mape"]
        rows.append(row)
        print(json.dumps(row), flush=True)
    b = np.mean([r["bdpt_mape"] for r in rows])
    p = np.mean([r["proxy_mape"] for r in rows])
    print(json.dumps({"bdpt_mape": b, "proxy_mape": p, "ratio": p / b}))


if __name__ == "__main__":
    main()
