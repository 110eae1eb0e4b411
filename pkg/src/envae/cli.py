"""Command-line harness: train, eval, sample, sweep, bench.

Every command writes resolved_config.json into its output directory; CSV
and JSON artifacts are the primary outputs, with PNG figures rendered
alongside. Exit codes: 0 success, 2 usage/config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import diagnostics as diag
from . import figures
from .autodiff import NonFiniteError
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .data import Dataset, IdxError, export_raster, split
from .errors import ConfigError
from .losses import LossConfig
from .nets import Params, decoder_forward
from .sampling import Rng
from .training import TrainingDiverged, train

_SWEEP_PARAMS = {
    "loss.beta": float,
    "loss.m_samples": int,
    "arch.latent_dim": int,
}

_FID_NOTE = ("energy distance between model samples and held-out data is "
             "reported in place of FID/IS scores")


def _prepare(resolved: dict):
    dataset = cfgmod.build_dataset(resolved)
    train_ds, test_ds = split(dataset, resolved["data"]["test_fraction"],
                              resolved["data"]["seed"])
    arch = cfgmod.build_arch(resolved, dataset)
    loss = cfgmod.build_loss(resolved)
    train_cfg = cfgmod.build_train(resolved, arch, loss)
    return train_ds, test_ds, train_cfg


def _train_run(resolved: dict, out: Path):
    train_ds, test_ds, train_cfg = _prepare(resolved)
    ckpt, trace = train(train_cfg, train_ds)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, out / "checkpoint.bin")
    trace.to_csv(out / "trace.csv")
    cfgmod.write_resolved(resolved, out / "resolved_config.json")
    if trace.steps:
        figures.render_trace(trace.steps, out / "train_curves.png")
    return ckpt, trace, test_ds


def cmd_train(args) -> int:
    resolved = cfgmod.load_config(args.config, seed_override=args.seed)
    _train_run(resolved, Path(args.out))
    return 0


def _decode_prior(params: Params, count: int, rng: Rng) -> np.ndarray:
    z = rng.standard_normal((count, params.arch.latent_dim))
    return decoder_forward(params, z).data


def _decode_recon(params: Params, x: np.ndarray) -> np.ndarray:
    from .nets import encoder_forward

    post = encoder_forward(params, x)
    return decoder_forward(params, post.mu.data).data


def _eval_metrics(ckpt: Checkpoint, test_ds: Dataset, eval_cfg: dict, seed: int,
                  out: Path) -> diag.MetricReport:
    params = ckpt.to_params()
    beta = ckpt.loss.beta
    rng = Rng(seed, stream=1)
    report = diag.MetricReport()

    generated = _decode_prior(params, eval_cfg["gen_samples"], rng)
    recon = _decode_recon(params, test_ds.x)
    report.scalars["energy_distance_gen"] = diag.energy_distance(generated, test_ds.x, beta)
    report.scalars["energy_distance_recon"] = diag.energy_distance(recon, test_ds.x, beta)
    report.scalars["latent_var_mean"] = diag.latent_variance_mean(params, test_ds)

    if eval_cfg["lipschitz_map"] == "encoder":
        from .nets import encoder_forward

        points = test_ds.x[: eval_cfg["lipschitz_points"]]
        fn = lambda p: encoder_forward(params, p).mu.data  # noqa: E731
    else:
        points = rng.standard_normal((eval_cfg["lipschitz_points"], params.arch.latent_dim))
        fn = lambda p: decoder_forward(params, p).data  # noqa: E731
    report.scalars["lipschitz"] = diag.lipschitz_estimate(
        points=points, map_fn=fn, pairs=eval_cfg["lipschitz_pairs"], rng=rng)

    x_corr = test_ds.x
    if eval_cfg["corr_points"] < x_corr.shape[0]:
        x_corr = x_corr[rng.permutation(x_corr.shape[0])[: eval_cfg["corr_points"]]]
    sub = Dataset(x=x_corr, kind=test_ds.kind, name=test_ds.name,
                  image_shape=test_ds.image_shape)
    ref, approx = diag._uncertainty_pairs(params, sub.x, eval_cfg["corr_m_ref"], rng,
                                          beta, eval_cfg["corr_noise_draws"])
    if np.std(ref) == 0.0 or np.std(approx) == 0.0:
        raise diag.DegenerateSampleError("dispersion terms are constant across points")
    r = float(np.corrcoef(ref, approx)[0, 1])
    report.scalars["pearson_r"] = r
    report.scalars["r_squared"] = r * r
    figures.render_correlation(ref, approx, r, out / "correlation.png")

    vmap = diag.variance_map(params, test_ds.x[0], eval_cfg["variance_k"], rng)
    report.arrays["variance_map"] = vmap
    _write_csv(out / "variance_map.csv", "coordinate,variance",
               ((i, f"{v!r}") for i, v in enumerate(vmap)))
    figures.render_variance_map(vmap, test_ds.image_shape, out / "variance_map.png")

    res = diag.residual_distribution(params, test_ds.x[0], eval_cfg["variance_k"],
                                     bins=41, rng=rng)
    report.scalars["residual_mean"] = res.mean
    report.scalars["residual_std"] = res.std
    report.scalars["residual_central_fraction"] = res.central_fraction
    report.arrays["residual_histogram"] = res.counts.astype(float)
    _write_csv(out / "residuals.csv", "bin_left,bin_right,count",
               ((f"{res.bin_edges[i]!r}", f"{res.bin_edges[i + 1]!r}", int(c))
                for i, c in enumerate(res.counts)))
    figures.render_residuals(res.counts, res.bin_edges, out / "residuals.png")

    if test_ds.kind == "image" and test_ds.image_shape[2] == 1:
        h, w, _ = test_ds.image_shape
        k = min(64, test_ds.x.shape[0], generated.shape[0])
        radii, real_curve = diag.radial_spectrum(test_ds.x[:k].reshape(k, h, w))
        _, gen_curve = diag.radial_spectrum(
            np.clip(generated[:k], 0.0, 1.0).reshape(k, h, w))
        report.arrays["spectrum_real"] = real_curve
        report.arrays["spectrum_generated"] = gen_curve
        _write_csv(out / "spectrum.csv", "radius,real,generated",
                   ((int(r), f"{a!r}", f"{b!r}")
                    for r, a, b in zip(radii, real_curve, gen_curve)))
        figures.render_spectrum(radii, {"real": real_curve, "generated": gen_curve},
                                out / "spectrum.png")
    else:
        report.skipped.append("spectrum")
        _write_csv(out / "spectrum.csv", "radius,real,generated", [])

    report.validate()
    return report


def _write_csv(path, header: str, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(str(c) for c in row) + "\n")


def _metrics_json(report: diag.MetricReport, path) -> None:
    doc = dict(sorted(report.scalars.items()))
    doc["skipped"] = sorted(report.skipped)
    doc["note"] = _FID_NOTE
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def cmd_eval(args) -> int:
    resolved = cfgmod.load_config(args.config)
    ckpt = load_checkpoint(args.checkpoint)
    dataset = cfgmod.build_dataset(resolved)
    _, test_ds = split(dataset, resolved["data"]["test_fraction"], resolved["data"]["seed"])
    arch = cfgmod.build_arch(resolved, dataset)
    if arch != ckpt.arch:
        raise ConfigError("checkpoint architecture does not match the config")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = _eval_metrics(ckpt, test_ds, resolved["eval"], resolved["train"]["seed"], out)
    _metrics_json(report, out / "metrics.json")
    cfgmod.write_resolved(resolved, out / "resolved_config.json")
    return 0


def _export_outputs(outputs: np.ndarray, image_shape, out: Path, stem: str) -> None:
    if image_shape is None:
        _write_csv(out / f"{stem}.csv",
                   ",".join(f"x{i}" for i in range(outputs.shape[1])),
                   ((f"{v!r}" for v in row) for row in outputs))
        return
    h, w, c = image_shape
    for i, row in enumerate(outputs):
        img = np.clip(row, 0.0, 1.0).reshape(h, w, c)
        if c == 1:
            img = img[:, :, 0]
            suffix = "pgm"
        else:
            suffix = "ppm"
        export_raster(img, out / f"{stem}_{i:04d}.{suffix}")


def cmd_sample(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    params = ckpt.to_params()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    image_shape = _image_shape_for(params.arch)
    if args.walk is not None:
        try:
            s1, s2 = (int(s) for s in args.walk.split(","))
        except ValueError as exc:
            raise ConfigError("--walk expects two comma-separated seeds") from exc
        z1 = Rng(s1).standard_normal(params.arch.latent_dim)
        z2 = Rng(s2).standard_normal(params.arch.latent_dim)
        outputs = diag.latent_walk(params, z1, z2, args.steps)
        _export_outputs(outputs, image_shape, out, "walk")
    else:
        rng = Rng(args.seed, stream=2)
        outputs = _decode_prior(params, args.n, rng)
        _export_outputs(outputs, image_shape, out, "sample")
    cfgmod.write_resolved({"arch": ckpt.arch.to_dict(),
                           "sample": {"n": args.n, "seed": args.seed,
                                      "walk": args.walk, "steps": args.steps}},
                          out / "resolved_config.json")
    return 0


def _image_shape_for(arch) -> tuple[int, int, int] | None:
    # square single-channel layouts are exported as rasters; anything else as CSV
    side = int(round(arch.input_dim ** 0.5))
    if arch.output_activation == "sigmoid" and side * side == arch.input_dim and side >= 4:
        return (side, side, 1)
    return None


def _light_eval(ckpt: Checkpoint, test_ds: Dataset, eval_cfg: dict, seed: int) -> dict:
    params = ckpt.to_params()
    rng = Rng(seed, stream=1)
    generated = _decode_prior(params, eval_cfg["gen_samples"], rng)
    recon = _decode_recon(params, test_ds.x)
    points = rng.standard_normal((eval_cfg["lipschitz_points"], params.arch.latent_dim))
    return {
        "energy_distance_gen": diag.energy_distance(generated, test_ds.x, ckpt.loss.beta),
        "energy_distance_recon": diag.energy_distance(recon, test_ds.x, ckpt.loss.beta),
        "latent_var_mean": diag.latent_variance_mean(params, test_ds),
        "lipschitz": diag.lipschitz_estimate(
            points=points, map_fn=lambda p: decoder_forward(params, p).data,
            pairs=eval_cfg["lipschitz_pairs"], rng=rng),
    }


def _set_path(resolved: dict, dotted: str, value) -> None:
    section, key = dotted.split(".", 1)
    resolved[section][key] = value


def cmd_sweep(args) -> int:
    if args.param not in _SWEEP_PARAMS:
        raise ConfigError(f"--param must be one of {sorted(_SWEEP_PARAMS)}")
    cast = _SWEEP_PARAMS[args.param]
    try:
        values = [cast(v) for v in args.values.split(",") if v]
    except ValueError as exc:
        raise ConfigError(f"bad value list for {args.param}: {args.values!r}") from exc
    if not values:
        raise ConfigError("--values is empty")
    base = cfgmod.load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    leaf = args.param.split(".")[1]
    rows = []
    for value in values:
        resolved = copy.deepcopy(base)
        _set_path(resolved, args.param, value)
        run_dir = out / f"{leaf}_{value}"
        ckpt, trace, test_ds = _train_run(resolved, run_dir)
        metrics = _light_eval(ckpt, test_ds, resolved["eval"], resolved["train"]["seed"])
        last = trace.steps[-1]
        rows.append({
            "value": value,
            "final_total": last.total,
            "final_recon": last.recon,
            "final_dispersion": last.dispersion,
            "final_kl": last.kl,
            **metrics,
            "epoch_ms": trace.median_epoch_ms(),
        })

    header = list(rows[0])
    _write_csv(out / "sweep_summary.csv", ",".join(header),
               ((_fmt(row[k]) for k in header) for row in rows))
    cfgmod.write_resolved(base, out / "resolved_config.json")
    figures.render_sweep(values,
                         {k: [row[k] for row in rows]
                          for k in ("energy_distance_gen", "latent_var_mean",
                                    "lipschitz", "epoch_ms")},
                         args.param, out / "sweep_summary.png")
    return 0


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def cmd_bench(args) -> int:
    base = cfgmod.load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    # fixed short budget: three epochs per configuration, median epoch time
    plan = [("vanilla", 1), ("fenvae", 1), ("envae", 10), ("envae", 50), ("envae", 100)]
    rows = []
    for variant, m in plan:
        resolved = copy.deepcopy(base)
        resolved["loss"]["variant"] = variant
        if variant == "envae":
            resolved["loss"]["m_samples"] = m
        resolved["train"]["epochs"] = 3
        train_ds, _, train_cfg = _prepare(resolved)
        _, trace = train(train_cfg, train_ds)
        rows.append((variant, m, trace.median_epoch_ms()))
    _write_csv(out / "bench.csv", "variant,m_samples,epoch_ms",
               ((v, m, repr(ms)) for v, m, ms in rows))
    cfgmod.write_resolved(base, out / "resolved_config.json")
    figures.render_bench([f"{v}(M={m})" if v == "envae" else v for v, m, _ in rows],
                         [ms for _, _, ms in rows], out / "bench.png")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="envae",
        description="Energy-score VAEs: train, evaluate, sample, sweep, benchmark.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoint/trace")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override train.seed")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="run the diagnostic battery on a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sample", help="decode prior draws or a latent walk")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--walk", default=None, metavar="SEED1,SEED2")
    p.add_argument("--steps", type=int, default=10)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("sweep", help="train once per hyperparameter value")
    p.add_argument("--config", required=True)
    p.add_argument("--param", required=True, help="|".join(sorted(_SWEEP_PARAMS)))
    p.add_argument("--values", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("bench", help="time vanilla, fenvae, and envae variants")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, CheckpointError, IdxError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingDiverged, NonFiniteError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
