"""Long-run PT reference for a shipped scene.

Accumulates per-pixel sums in chunks so a run can be resumed; every chunk
uses its own RNG stream derived from (seed, chunk index). Writes an npz
with the raw sums plus mean and standard-error PFMs.

    python3 scripts/make_reference.py mirror_box --spp 16384 --out tests/data
"""

import argparse
from pathlib import Path

import numpy as np

from proxybdpt.scene import load_shipped
from proxybdpt.transport.imageio import write_pfm
from proxybdpt.transport.render import render_pt


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("scene")
    ap.add_argument("--spp", type=int, default=16384)
    ap.add_argument("--chunk", type=int, default=256)
    ap.add_argument("--seed", type=int, default=12345)
    ap.add_argument("--out", default="tests/data")
    args = ap.parse_args(argv)

    scene = load_shipped(args.scene)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    npz = out / f"{args.scene}_pt_reference.npz"
    h, w = scene.camera.height, scene.camera.width
    if npz.exists():
        z = np.load(npz)
        total, total_sq, count, chunks = z["total"], z["total_sq"], int(z["count"]), int(z["chunks"])
    else:
        total, total_sq, count, chunks = np.zeros((h, w, 3)), np.zeros((h, w, 3)), 0, 0

    while count < args.spp:
        rng = np.random.default_rng([args.seed, chunks])
        res = render_pt(scene, args.chunk, rng)
        # chunk means are i.i.d.; keep sums of per-chunk means for the error
        total += res.image
        total_sq += res.image**2
        count += args.chunk
        chunks += 1
        np.savez(npz, total=total, total_sq=total_sq, count=count, chunks=chunks, chunk=args.chunk)
        print(f"{count} spp", flush=True)

    mean = total / chunks
    var = np.maximum(total_sq / chunks - mean**2, 0.0) * chunks / max(chunks - 1, 1)
    write_pfm(out / f"{args.scene}_pt_reference.pfm", mean)
    write_pfm(out / f"{args.scene}_pt_reference_stderr.pfm", np.sqrt(var / chunks))


if __name__ == "__main__":
    main()
