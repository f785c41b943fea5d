"""Per-image PSNR table: noisy input, MLP output, and OMP over the MLP's last-layer dictionary.

    python3 scripts/mlp_vs_omp.py runs/desk/run/model.mlpd runs/desk/test
"""

import argparse

import numpy as np

from mlpdenoise.imageio import load_image_dir
from mlpdenoise.mlp import load
from mlpdenoise.noise import NoiseSpec, apply_noise
from mlpdenoise.numerics import make_rng
from mlpdenoise.patches import PatchGeometry, denoise_image, psnr
from mlpdenoise.sparse import extract_dictionary, omp_denoise_image


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("model")
    p.add_argument("clean_dir")
    p.add_argument("--sigma", type=float, default=25.0)
    p.add_argument("--seed", type=int, default=1000)
    args = p.parse_args()

    net = load(args.model)
    g = PatchGeometry.for_arch(net.arch)
    D = extract_dictionary(net).normalize_columns()
    e = net.arch.output_edge
    rows = []
    print(f"{'image':<16}{'noisy':>8}{'mlp':>8}{'omp':>8}")
    for i, (name, clean) in enumerate(load_image_dir(args.clean_dir)):
        noisy = apply_noise(clean, NoiseSpec(sigma=args.sigma), make_rng(args.seed + i))
        mlp = psnr(clean, denoise_image(net, noisy, g))
        sparse = psnr(clean, omp_denoise_image(noisy, D, PatchGeometry(e, e), sigma=args.sigma))
        rows.append((psnr(clean, noisy), mlp, sparse))
        print(f"{name:<16}{rows[-1][0]:8.2f}{mlp:8.2f}{sparse:8.2f}")
    m = np.mean(rows, axis=0)
    print(f"{'mean':<16}{m[0]:8.2f}{m[1]:8.2f}{m[2]:8.2f}")
    print(f"mlp wins {sum(r[1] > r[2] for r in rows)}/{len(rows)}")


if __name__ == "__main__":
    main()
