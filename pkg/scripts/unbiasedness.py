"""Per-pixel z-test of a proxy-BDPT render against the PT reference.

    python3 scripts/unbiasedness.py --spp 1024 \
        --reference tests/data/mirror_box_pt_reference.npz

Pixels below the luminance floor (1e-2 x mean reference luminance) are
excluded. Prints the fraction of remaining pixels with |z| <= 3.
"""

import argparse
import json
import time

import numpy as np

from proxybdpt.metrics import default_eps
from proxybdpt.proxy import render_proxy_bdpt
from proxybdpt.scene import load_shipped
from proxybdpt.scene.vec import luminance
from proxybdpt.transport.imageio import read_pfm


def load_reference(path):
    """(mean, stderr) from a reference npz, or a PFM plus its _stderr PFM."""
    if str(path).endswith(".npz"):
        z = np.load(path)
        n = int(z["chunks"])
        mean = z["total"] / n
        var = np.maximum(z["total_sq"] / n - mean**2, 0.0) * n / max(n - 1, 1)
        return mean, np.sqrt(var / n)
    return read_pfm(path), read_pfm(str(path).replace(".pfm", "_stderr.pfm"))


def z_test(image, stderr, ref, ref_se, k=3.0):
    lum, ref_lum = luminance(image), luminance(ref)
    se = np.sqrt(luminance(stderr) ** 2 + luminance(ref_se) ** 2)
    mask = ref_lum > default_eps(ref)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.abs(lum - ref_lum) / se
    ok = (z <= k) | ((se == 0) & (lum == ref_lum))
    return float(ok[mask].mean()), z, mask


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scene", default="mirror_box")
    ap.add_argument("--spp", type=int, default=1024)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--reference", required=True)
    args = ap.parse_args(argv)

    scene = load_shipped(args.scene)
    ref, ref_se = load_reference(args.reference)
    t = time.time()
    res = render_proxy_bdpt(scene, args.spp, np.random.default_rng(args.seed))
    frac, z, mask = z_test(res.image, res.stderr, ref, ref_se)
    zm = z[mask]
    print(json.dumps({
        "spp": args.spp,
        "seconds": round(time.time() - t, 1),
        "pixels": int(mask.sum()),
        "pass_fraction": frac,
        "frac_z_gt_2": float(np.mean(zm > 2)),
        "mean_signed_rel": float(np.mean(((luminance(res.image) - luminance(ref)) / luminance(ref))[mask])),
    }))


if __name__ == "__main__":
    main()
