"""Command line entry point: ``mlpdenoise {train,denoise,evaluate,analyze,dict,noise}``.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import introspection as intro
from . import sparse
from .imageio import emit_montage, ensure_parent, load_image_dir, read_image, write_image
from .mlp import ArchitectureParseError, CheckpointError, NonFiniteError, load
from .noise import NoiseSpec, apply_noise
from .numerics import RNG_ALGORITHM, child_rng, make_rng
from .patches import PatchGeometry, denoise_image, format_psnr, psnr
from .trainer import (CHECKPOINT_NAME, ConfigError, TrainingAborted, load_config, train)

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("mlpdenoise")


class UsageError(Exception):
    pass


class IOFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- helpers --

def _load_model(path):
    try:
        return load(path)
    except FileNotFoundError:
        raise IOFailure(f"--model: checkpoint not found: {path}") from None
    except CheckpointError as exc:
        raise IOFailure(f"--model {path}: {exc}") from None


def _read(path, flag):
    try:
        return read_image(path)
    except (FileNotFoundError, IsADirectoryError):
        raise IOFailure(f"{flag}: image not found: {path}") from None
    except OSError as exc:
        raise IOFailure(f"{flag}: cannot read image {path}: {exc}") from None


def _read_dir(path, flag):
    try:
        items = load_image_dir(path)
    except FileNotFoundError:
        raise IOFailure(f"{flag}: directory not found: {path}") from None
    if not items:
        raise IOFailure(f"{flag}: no images in {path}")
    return items


def _write(path, flag, fn):
    try:
        ensure_parent(path)
        fn(path)
    except OSError as exc:
        raise IOFailure(f"{flag}: cannot write {path}: {exc}") from None


def _write_csv(path, header, rows, flag="--out"):
    def do(p):
        with open(p, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    if path is None:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    else:
        _write(path, flag, do)


def _noise_from(args):
    try:
        return NoiseSpec(kind=args.kind, sigma=args.sigma, p=args.p, sigma_s=args.sigma_s, quality=args.quality)
    except ValueError as exc:
        raise UsageError(f"--kind/--sigma/--p/--sigma-s/--quality: {exc}") from None


def _add_noise_flags(p, kind=True):
    if kind:
        p.add_argument("--kind", default="awg", help="awg | salt_pepper | stripe | jpeg_block")
    p.add_argument("--sigma", type=float, default=25.0)
    p.add_argument("--p", type=float, default=0.1)
    p.add_argument("--sigma-s", dest="sigma_s", type=float, default=25.0)
    p.add_argument("--quality", type=int, default=50)


def _hidden_layer(model, layer, flag="--layer"):
    layer = model.n_hidden - 1 if layer is None else layer
    if not 0 <= layer < model.n_hidden:
        raise UsageError(f"{flag}: {layer} is not a hidden layer (model has {model.n_hidden})")
    return layer


def _noisy_set(clean_items, noise, seed):
    rng = child_rng(seed, 2)
    return [apply_noise(im, noise, rng) for _, im in clean_items]


def _geometry(model, stride, flag="--stride"):
    try:
        g = PatchGeometry.for_arch(model.arch, stride)
    except ValueError as exc:
        raise UsageError(f"{flag}: {exc}") from None
    if g.stride > g.output_edge:
        raise UsageError(f"{flag}: stride {stride} exceeds the model's output edge {g.output_edge}")
    return g


# -- subcommands --

def cmd_train(args):
    overrides = {"arch": args.arch, "sigma": args.sigma, "max_updates": args.max_updates, "seed": args.seed}
    try:
        config = load_config(args.config, overrides)
    except FileNotFoundError:
        raise IOFailure(f"--config: file not found: {args.config}") from None
    except (ConfigError, ArchitectureParseError) as exc:
        raise UsageError(f"--config {args.config}: {exc}") from None
    out = Path(args.out)
    print(f"# seed={config.seed} rng={RNG_ALGORITHM} arch={config.arch} noise={config.noise.describe()}")
    try:
        result = train(config, out_dir=out)
    except (FileNotFoundError, ValueError) as exc:
        raise IOFailure(f"--config {args.config} (corpus_dir/test_dir): {exc}") from None
    if result.log:
        last = result.log[-1]
        print(f"update={last.update} train_psnr={format_psnr(last.train_psnr)} test_psnr={format_psnr(last.test_psnr)}")
    print(f"checkpoint={out / CHECKPOINT_NAME}")
    return EXIT_OK


def cmd_denoise(args):
    model = _load_model(args.model)
    noisy = _read(args.inp, "--in")
    arch = model.arch
    try:
        g = PatchGeometry(args.input_edge or arch.input_edge, args.output_edge or arch.output_edge, args.stride)
    except ValueError as exc:
        raise UsageError(f"--input-edge/--output-edge/--stride: {exc}") from None
    if (g.input_edge, g.output_edge) != (arch.input_edge, arch.output_edge):
        raise UsageError(f"--input-edge/--output-edge: dimension mismatch, geometry {g.input_edge}/{g.output_edge} "
                         f"but model {args.model} is {arch} ({arch.input_edge}/{arch.output_edge})")
    g = _geometry(model, args.stride)
    out = denoise_image(model, noisy, g)
    _write(args.out, "--out", lambda p: write_image(p, out))
    return EXIT_OK


def cmd_evaluate(args):
    model = _load_model(args.model)
    items = _read_dir(args.clean, "--clean")
    try:
        noise = NoiseSpec(sigma=args.sigma)
    except ValueError as exc:
        raise UsageError(f"--sigma: {exc}") from None
    g = _geometry(model, args.stride)
    noisy = _noisy_set(items, noise, args.seed)
    rows, noisy_scores, den_scores = [], [], []
    for (name, clean), n in zip(items, noisy):
        den = denoise_image(model, n, g)
        a, b = psnr(clean, n), psnr(clean, den)
        noisy_scores.append(a)
        den_scores.append(b)
        rows.append([name, format_psnr(a), format_psnr(b)])
    rows.append(["mean", format_psnr(float(np.mean(noisy_scores))), format_psnr(float(np.mean(den_scores)))])
    print(f"# seed={args.seed} sigma={args.sigma:g} stride={args.stride}")
    _write_csv(args.out, ["image", "noisy_psnr", "denoised_psnr"], rows)
    return EXIT_OK


def _activation_sample(args, model, layer):
    items = _read_dir(_require(args.images, "--images"), "--images")
    noise = None if args.sigma == 0 else NoiseSpec(sigma=args.sigma)
    k = model.arch.input_edge
    try:
        source = intro.corpus_patch_source([im for _, im in items], k, noise)
    except ValueError as exc:
        raise IOFailure(f"--images: {exc}") from None
    return intro.collect_activations(model, source, layer, args.n, make_rng(args.seed))


def cmd_analyze(args):
    model = _load_model(args.model)
    what = args.what
    print(f"# analyze {what} seed={args.seed} model={args.model}")
    if what in ("histogram", "entropy", "covariance"):
        layer = _hidden_layer(model, args.layer)
        sample = _activation_sample(args, model, layer)
        if what == "histogram":
            counts, edges = intro.activation_histogram(sample.post, args.bins)
            pre_counts, pre_edges = np.histogram(sample.pre.ravel(), bins=args.bins)
            rows = [[f"{edges[i]:.6g}", f"{edges[i + 1]:.6g}", int(counts[i]),
                     f"{pre_edges[i]:.6g}", f"{pre_edges[i + 1]:.6g}", int(pre_counts[i])]
                    for i in range(args.bins)]
            print(f"# binarity_fraction(tau={args.tau:g}) = {intro.binarity_fraction(sample.post, args.tau):.6f}")
            _write_csv(args.out, ["post_lo", "post_hi", "post_count", "pre_lo", "pre_hi", "pre_count"], rows)
        elif what == "entropy":
            rows = [[s.unit, f"{s.mean:.8g}", f"{s.variance:.8g}", f"{s.entropy_bits:.8g}"]
                    for s in intro.unit_stats(sample)]
            _write_csv(args.out, ["index", "mean", "variance", "entropy_bits"], rows)
        else:
            m = args.m if args.m is not None else sample.post.shape[0]
            if not 1 <= m <= sample.post.shape[0]:
                raise UsageError(f"--m: must lie in [1, {sample.post.shape[0]}]")
            cov, units = intro.activation_covariance(sample, m)
            header = ["unit"] + [str(u) for u in units]
            rows = [[int(units[i])] + [f"{v:.8g}" for v in cov[i]] for i in range(m)]
            _write_csv(args.out, header, rows)
    elif what == "spectrum":
        layer = model.n_layers - 1 if args.layer is None else args.layer
        if not 0 <= layer < model.n_layers:
            raise UsageError(f"--layer: {layer} out of range (model has {model.n_layers} weight matrices)")
        sv = intro.weight_spectrum(model, layer)
        _write_csv(args.out, ["index", "singular_value"], [[i, f"{v:.10g}"] for i, v in enumerate(sv)])
    elif what == "filters":
        count = args.count or model.weights[0].shape[0]
        det = intro.feature_detectors(model)[:count]
        gen = intro.feature_generators(model)[:count]
        out = Path(_require(args.out, "--out"))
        _write(out.with_name(out.stem + "_detectors" + out.suffix), "--out",
               lambda p: emit_montage(det, args.cols, p, args.pad))
        _write(out.with_name(out.stem + "_generators" + out.suffix), "--out",
               lambda p: emit_montage(gen, args.cols, p, args.pad))
    elif what == "output-patterns":
        layer = _hidden_layer(model, args.layer)
        size = model.weights[layer].shape[0]
        count = min(args.count or size, size)
        e = model.arch.output_edge
        pats = [intro.output_pattern(model, layer, j).reshape(e, e) for j in range(count)]
        _write(_require(args.out, "--out"), "--out", lambda p: emit_montage(pats, args.cols, p, args.pad))
    elif what == "actmax":
        layer = _hidden_layer(model, args.layer)
        size = model.weights[layer].shape[0]
        count = min(args.count or 16, size)
        if model.arch.bm is not None:
            raise UsageError("--model: activation maximization montage needs a plain patch net")
        k = model.arch.input_edge
        pats, rows = [], []
        for j in range(count):
            res = intro.activation_maximization(model, layer, j, child_rng(args.seed, j), args.steps, args.step_size)
            pats.append(res.pattern.reshape(k, k))
            rows.append([j, f"{res.trajectory[0]:.8g}", f"{res.trajectory[-1]:.8g}"])
        print(f"# objective=pre_activation steps={args.steps} step_size={args.step_size:g}")
        _write(_require(args.out, "--out"), "--out", lambda p: emit_montage(pats, args.cols, p, args.pad))
        if args.csv:
            _write_csv(args.csv, ["unit", "initial_pre_activation", "final_pre_activation"], rows, "--csv")
    elif what == "importance":
        items = _read_dir(_require(args.images, "--images"), "--images")
        noisy = _noisy_set(items, NoiseSpec(sigma=args.sigma if args.sigma > 0 else 25.0), args.seed)
        n_det = model.weights[0].shape[0]
        subset = args.subset if args.subset is not None else min(1500, n_det)
        if not 1 <= subset <= n_det:
            raise UsageError(f"--subset: must lie in [1, {n_det}]")
        if args.iterations < 1:
            raise UsageError("--iterations: must be >= 1")
        res = intro.detector_importance(model, [im for _, im in items], noisy, make_rng(args.seed),
                                        subset, args.iterations, args.stride)
        print(f"# baseline_psnr={format_psnr(res.baseline)}")
        rows = [[j, "nan" if math.isnan(s) else f"{s:.6f}", int(c)] for j, (s, c) in enumerate(zip(res.scores, res.counts))]
        _write_csv(args.out, ["detector", "mean_psnr", "kept_count"], rows)
    elif what == "saturation":
        if model.n_hidden != 1:
            raise UsageError(f"--model: saturation needs a single-hidden-layer net, model has {model.n_hidden}")
        rng = make_rng(args.seed)
        k = model.arch.input_edge
        if args.inp:
            img = _read(args.inp, "--in")
            if min(img.shape) < k:
                raise UsageError(f"--in: image smaller than input patch {k}")
            patch = img[:k, :k] + rng.normal(0, args.sigma, (k, k))
        else:
            patch = 127.5 + rng.normal(0, args.sigma if args.sigma > 0 else 25.0, (k, k))
        x = (patch.ravel() - 127.5) / 255.0
        e = model.arch.output_edge
        outs = {m: intro.saturation_experiment(model, x, m, tau=args.tau_threshold, keep_tanh=not args.no_tanh)
                for m in intro.SATURATION_MODES}
        rows = [[m, f"{np.var(o * 255.0):.6f}"] for m, o in outs.items()]
        _write_csv(args.csv, ["mode", "output_variance"], rows, "--csv")
        if args.out:
            pats = [patch[(k - e) // 2:(k + e) // 2, (k - e) // 2:(k + e) // 2]] + [o.reshape(e, e) for o in outs.values()]
            _write(args.out, "--out", lambda p: emit_montage(pats, 4, p, args.pad))
    return EXIT_OK


def _require(value, flag):
    if not value:
        raise UsageError(f"{flag} is required for this analysis")
    return value


def cmd_dict(args):
    model = _load_model(args.model)
    D = sparse.extract_dictionary(model)
    if args.what == "export":
        _write(_require(args.out, "--out"), "--out", lambda p: sparse.save_dictionary(D, p))
        return EXIT_OK
    gm = _geometry(model, args.stride)
    items = _read_dir(_require(args.clean, "--clean"), "--clean")
    e = model.arch.output_edge
    g = PatchGeometry(e, e, args.stride)
    rows = []
    if args.what == "approx":
        for name, clean in items:
            _, score = sparse.approx_image(clean, D, g, args.max_iters, args.tol)
            rows.append([name, format_psnr(score)])
        _write_csv(args.out, ["image", "approx_psnr"], rows)
    else:
        if args.sigma <= 0:
            raise UsageError("--sigma: must be > 0 for omp-denoise")
        Dn = D.normalize_columns()
        noisy = _noisy_set(items, NoiseSpec(sigma=args.sigma), args.seed)
        for (name, clean), n in zip(items, noisy):
            den = denoise_image(model, n, gm)
            om = sparse.omp_denoise_image(n, Dn, g, args.sigma, args.C)
            rows.append([name, format_psnr(psnr(clean, n)), format_psnr(psnr(clean, den)), format_psnr(psnr(clean, om))])
        print(f"# seed={args.seed} sigma={args.sigma:g} C={args.C:g}")
        _write_csv(args.out, ["image", "noisy_psnr", "mlp_psnr", "mlp_omp_psnr"], rows)
    return EXIT_OK


def cmd_noise(args):
    img = _read(args.inp, "--in")
    spec = _noise_from(args)
    noisy = apply_noise(img, spec, make_rng(args.seed))
    _write(args.out, "--out", lambda p: write_image(p, noisy))
    print(f"# seed={args.seed} {spec.describe()} psnr={format_psnr(psnr(img, np.clip(np.rint(noisy), 0, 255)))}")
    return EXIT_OK


def build_parser():
    p = _Parser(prog="mlpdenoise", description="Patch-based MLP denoisers: train, apply, introspect.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a denoiser from a key = value config file")
    t.add_argument("--config", required=True)
    t.add_argument("--arch")
    t.add_argument("--sigma", type=float)
    t.add_argument("--max-updates", dest="max_updates", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("denoise", help="denoise one image")
    d.add_argument("--model", required=True)
    d.add_argument("--in", dest="inp", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--stride", type=int, default=1)
    d.add_argument("--input-edge", dest="input_edge", type=int)
    d.add_argument("--output-edge", dest="output_edge", type=int)
    d.set_defaults(func=cmd_denoise)

    e = sub.add_parser("evaluate", help="PSNR before/after denoising for a directory of clean images")
    e.add_argument("--model", required=True)
    e.add_argument("--clean", required=True)
    e.add_argument("--sigma", type=float, required=True)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--stride", type=int, default=1)
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("analyze", help="hidden-unit analyses")
    a.add_argument("what", choices=["histogram", "entropy", "spectrum", "covariance", "filters", "output-patterns",
                                    "actmax", "importance", "saturation"])
    a.add_argument("--model", required=True)
    a.add_argument("--images")
    a.add_argument("--in", dest="inp")
    a.add_argument("--layer", type=int)
    a.add_argument("--n", type=int, default=10_000)
    a.add_argument("--m", type=int)
    a.add_argument("--sigma", type=float, default=0.0)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--bins", type=int, default=50)
    a.add_argument("--tau", type=float, default=0.8)
    a.add_argument("--tau-threshold", dest="tau_threshold", type=float, default=1.0)
    a.add_argument("--no-tanh", dest="no_tanh", action="store_true")
    a.add_argument("--count", type=int)
    a.add_argument("--cols", type=int, default=16)
    a.add_argument("--pad", type=int, default=1)
    a.add_argument("--steps", type=int, default=1000)
    a.add_argument("--step-size", dest="step_size", type=float, default=0.1)
    a.add_argument("--subset", type=int)
    a.add_argument("--iterations", type=int, default=10)
    a.add_argument("--stride", type=int, default=3)
    a.add_argument("--csv")
    a.add_argument("--out")
    a.set_defaults(func=cmd_analyze)

    x = sub.add_parser("dict", help="last layer as a dictionary")
    x.add_argument("what", choices=["approx", "omp-denoise", "export"])
    x.add_argument("--model", required=True)
    x.add_argument("--clean")
    x.add_argument("--sigma", type=float, default=25.0)
    x.add_argument("--C", type=float, default=1.05)
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--stride", type=int, default=1)
    x.add_argument("--max-iters", dest="max_iters", type=int, default=500)
    x.add_argument("--tol", type=float, default=1e-10)
    x.add_argument("--out")
    x.set_defaults(func=cmd_dict)

    n = sub.add_parser("noise", help="corrupt an image")
    n.add_argument("--in", dest="inp", required=True)
    n.add_argument("--out", required=True)
    n.add_argument("--seed", type=int, default=0)
    _add_noise_flags(n)
    n.set_defaults(func=cmd_noise)
    return p


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IOFailure as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TrainingAborted, NonFiniteError, FloatingPointError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        if isinstance(exc, TrainingAborted) and exc.checkpoint:
            print(f"last good checkpoint: {exc.checkpoint}", file=sys.stderr)
        return EXIT_NUMERIC


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
