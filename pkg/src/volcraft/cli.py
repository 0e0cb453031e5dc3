"""Command-line surface for the toolkit; every experiment is a subcommand.

All randomness in a command flows from its --seed through named child
streams, so any invocation is exactly reproducible. Outputs are plot-ready
CSV/JSON (no rendering). Exit codes: 0 ok, 2 usage, 3 data error, 4
numerical failure; failures print a one-line JSON object on stderr.
"""

import argparse
import json
import sys

import numpy as np

from volcraft import arbitrage, calibration, dataio, datagen, heston, surfaces, vaemodel
from volcraft.errors import DataFormatError, DomainError, VolcraftError


class _Parser(argparse.ArgumentParser):
    """argparse with the machine-readable stderr contract."""

    def error(self, message):
        print(json.dumps({"error": "usage", "message": message}), file=sys.stderr)
        self.exit(2)


def _fail(exc):
    payload = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("line", "wing", "bound", "band", "asset_id", "epoch", "batch"):
        value = getattr(exc, attr, None)
        if value is not None:
            payload[attr] = value
    print(json.dumps(payload), file=sys.stderr)
    return getattr(exc, "exit_code", 4)


def _parse_ks(text):
    try:
        ks = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise DataFormatError(f"bad --ks list {text!r}") from None
    if not ks:
        raise DataFormatError("--ks must name at least one point count")
    return ks


def _parse_vector(text):
    try:
        return np.array([float(p) for p in text.split(",") if p.strip()])
    except ValueError:
        raise DataFormatError(f"bad vector {text!r}, expected comma-separated floats") from None


# --- subcommand implementations ---------------------------------------------


def _cmd_ingest(args):
    quotes = dataio.read_quotes_csv(args.quotes)
    grouped = {}
    order = []
    for asset, date, row in quotes:
        key = (asset, date)
        if key not in grouped:
            grouped[key] = []
            order.append(key)
        grouped[key].append(row)
    out = []
    for asset, date in order:
        rows = sorted(grouped[(asset, date)], key=lambda r: r.tenor)
        maturities = np.array([r.tenor for r in rows])
        if np.any(np.diff(maturities) <= 0):
            raise DataFormatError(f"{asset} {date}: duplicate tenor in quotes")
        smile_rows = [surfaces.quotes_to_smile(r) for r in rows]
        deltas = np.array([d for d, _ in smile_rows[0]])
        vols = np.array([[v for _, v in smile] for smile in smile_rows])
        grid = surfaces.GridSpec(maturities, deltas)
        out.append(surfaces.VolSurface(asset, date, vols, grid))
    ref = out[0].grid
    for surf in out[1:]:
        if not ref.matches(surf.grid):
            raise DataFormatError(
                f"{surf.asset_id} {surf.observation_date}: tenor set differs from "
                "the rest of the file"
            )
    dataio.write_surfaces_csv(args.out, out)
    print(f"wrote {len(out)} surfaces to {args.out}")
    return 0


def _cmd_gen_data(args):
    with open(args.spec) as fh:
        spec_doc = json.load(fh)
    specs = []
    for entry in spec_doc.get("assets", []):
        kwargs = {}
        for name in ("base_vol", "skew", "convexity", "term_slope"):
            if name in entry:
                kwargs[name] = datagen.ParamPathSpec(**entry[name])
        for name in ("crisis_level_shock", "crisis_convexity_shock"):
            if name in entry:
                kwargs[name] = entry[name]
        specs.append(
            datagen.SyntheticAssetSpec(
                asset_id=entry["asset_id"], n_days=int(entry["n_days"]),
                seed=int(entry["seed"]), **kwargs,
            )
        )
    if not specs:
        raise DataFormatError(f"{args.spec}: no assets defined")
    split = datagen.generate_corpus(specs)
    import os

    os.makedirs(args.out_dir, exist_ok=True)
    train_path = os.path.join(args.out_dir, "train.csv")
    val_path = os.path.join(args.out_dir, "validation.csv")
    dataio.write_surfaces_csv(train_path, split.train)
    dataio.write_surfaces_csv(val_path, split.validation)
    print(f"wrote {len(split.train)} train / {len(split.validation)} validation surfaces")
    return 0


def _cmd_train(args):
    corpus = dataio.read_surfaces_csv(args.surfaces)
    config = vaemodel.TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.learning_rate,
        beta=args.beta, seed=args.seed, latent_dim=args.latent_dim,
        decoder_kind=args.decoder, lambda_cal=args.lambda_cal, lambda_but=args.lambda_but,
    )
    result = vaemodel.train(corpus, config)
    vaemodel.save_model(result.model, args.out)
    last = result.trace[-1]
    print(
        f"trained on {len(corpus)} surfaces: loss {last.loss:.6e} "
        f"(re {last.re:.6e}, kl {last.kl:.4f}) -> {args.out}"
    )
    return 0


def _cmd_complete(args):
    model = vaemodel.load_model(args.model)
    groups = dataio.read_observations_csv(args.observations)
    config = calibration.CalibrationConfig(seed=args.seed)
    completed = []
    reports = []
    for asset, date, obs in groups:
        result = calibration.calibrate_latent(model, obs, config)
        surf = surfaces.VolSurface(asset, date, result.completed_surface.vols, model.grid)
        completed.append(surf)
        grid_tv = arbitrage.to_total_variance(model, result.z)
        report = arbitrage.evaluate_grid(grid_tv)
        reports.append(
            {
                "asset_id": asset,
                "date": date.isoformat(),
                "objective": result.objective_value,
                "iterations": result.iterations,
                "converged": result.converged,
                "n_observations": len(obs),
                "arbitrage": report.to_dict(),
            }
        )
    dataio.write_surfaces_csv(args.out, completed)
    report_path = args.report or (args.out + ".arb.json")
    with open(report_path, "w") as fh:
        json.dump(reports, fh, indent=2)
        fh.write("\n")
    print(f"completed {len(completed)} surfaces -> {args.out}; report -> {report_path}")
    return 0


def _cmd_encode(args):
    model = vaemodel.load_model(args.model)
    corpus = dataio.read_surfaces_csv(args.surfaces)
    import csv

    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["asset_id", "date"] + [f"z{i}" for i in range(model.latent_dim)]
        )
        for surf in corpus:
            if not surf.grid.matches(model.grid):
                raise DomainError(
                    f"{surf.asset_id} {surf.observation_date}: grid does not match the model"
                )
            code = vaemodel.encode(model, surfaces.flatten(surf))
            writer.writerow(
                [surf.asset_id, surf.observation_date.isoformat()]
                + [repr(float(v)) for v in code.mean]
            )
    print(f"encoded {len(corpus)} surfaces -> {args.out}")
    return 0


def _cmd_generate(args):
    model = vaemodel.load_model(args.model)
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 1]))
    out = []
    base_date = datagen.START_DATE
    import datetime as _dt

    for i in range(args.n):
        z = rng.standard_normal(model.latent_dim)
        surf = calibration.complete_surface(
            model, z, asset_id=f"sample{i:04d}",
            observation_date=base_date + _dt.timedelta(days=i),
        )
        out.append(surf)
    dataio.write_surfaces_csv(args.out, out)
    print(f"generated {args.n} surfaces -> {args.out}")
    return 0


def _cmd_interpolate(args):
    model = vaemodel.load_model(args.model)
    corners = [_parse_vector(part) for part in args.corners.split(";") if part.strip()]
    if len(corners) != 4:
        raise DataFormatError(
            f"--corners needs 4 semicolon-separated z vectors, got {len(corners)}"
        )
    for z in corners:
        if z.shape != (model.latent_dim,):
            raise DataFormatError(
                f"corner length {len(z)} != latent dim {model.latent_dim}"
            )
    steps = args.steps
    import csv

    coords = model.grid.coordinates()
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step_i", "step_j", "maturity_years", "delta", "vol"])
        for i in range(steps):
            a = i / (steps - 1) if steps > 1 else 0.0
            for j in range(steps):
                b = j / (steps - 1) if steps > 1 else 0.0
                z = (
                    (1 - a) * (1 - b) * corners[0]
                    + (1 - a) * b * corners[1]
                    + a * (1 - b) * corners[2]
                    + a * b * corners[3]
                )
                vec = vaemodel.decode_surface_vector(model, z)
                for (t, dlt), vol in zip(coords, vec):
                    writer.writerow([i, j, repr(float(t)), repr(float(dlt)), repr(float(vol))])
    print(f"interpolated {steps}x{steps} lattice -> {args.out}")
    return 0


def _cmd_check_arb(args):
    if (args.surfaces is None) == (args.model is None):
        raise DataFormatError("give either --surfaces or --model with --z")
    results = []
    if args.surfaces:
        for surf in dataio.read_surfaces_csv(args.surfaces):
            grid_tv = arbitrage.surface_to_total_variance(surf)
            report = arbitrage.evaluate_grid(grid_tv)
            results.append(
                {
                    "asset_id": surf.asset_id,
                    "date": surf.observation_date.isoformat(),
                    "arbitrage": report.to_dict(),
                }
            )
    else:
        if args.z is None:
            raise DataFormatError("--model needs --z")
        model = vaemodel.load_model(args.model)
        z = _parse_vector(args.z)
        if z.shape != (model.latent_dim,):
            raise DataFormatError(f"z length {len(z)} != latent dim {model.latent_dim}")
        grid_tv = arbitrage.to_total_variance(model, z)
        results.append({"z": z.tolist(), "arbitrage": arbitrage.evaluate_grid(grid_tv).to_dict()})
    with open(args.out, "w") as fh:
        json.dump(results, fh, indent=2)
        fh.write("\n")
    n_pass = sum(1 for r in results if r["arbitrage"]["passes"])
    print(f"checked {len(results)} surfaces: {n_pass} pass -> {args.out}")
    return 0


def _cmd_bench_mask(args):
    corpus = dataio.read_surfaces_csv(args.surfaces)
    if args.max_surfaces:
        corpus = corpus[: args.max_surfaces]
    models = {}
    for path in args.models:
        model = vaemodel.load_model(path)
        if model.latent_dim in models:
            raise DataFormatError(f"two models share latent_dim {model.latent_dim}")
        models[model.latent_dim] = model
    ks = _parse_ks(args.ks)
    rows = calibration.run_masking_benchmark(models, corpus, ks, args.seed)
    calibration.write_benchmark_csv(args.out, rows)
    print(f"benchmarked {len(models)} models x {len(ks)} masks -> {args.out}")
    return 0


def _cmd_bench_heston(args):
    corpus = dataio.read_surfaces_csv(args.surfaces)
    if args.max_surfaces:
        by_asset = {}
        for surf in corpus:
            by_asset.setdefault(surf.asset_id, []).append(surf)
        corpus = [s for group in by_asset.values() for s in group[: args.max_surfaces]]
    model = vaemodel.load_model(args.model)
    config = calibration.CalibrationConfig(seed=args.seed)
    stats = {}
    for surf in corpus:
        coords = surf.grid.coordinates()
        vols = surfaces.flatten(surf)
        obs = [surfaces.Observation(t, d, v) for (t, d), v in zip(coords, vols)]
        entry = stats.setdefault(surf.asset_id, {"heston": [], "vae": [], "failures": 0})
        try:
            params, _ = heston.heston_calibrate(obs, seed=args.seed)
            fitted = heston.heston_surface(params, surf.grid)
            entry["heston"].append(calibration.mae_bps(fitted, surf))
        except VolcraftError:
            entry["failures"] += 1
        result = calibration.calibrate_latent(model, obs, config)
        entry["vae"].append(calibration.mae_bps(result.completed_surface, surf))
    import csv

    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["asset_id", "heston_mae_bps", "vae_mae_bps", "n_surfaces", "n_failures"])
        for asset in sorted(stats):
            entry = stats[asset]
            h = float(np.mean(entry["heston"])) if entry["heston"] else float("nan")
            v = float(np.mean(entry["vae"])) if entry["vae"] else float("nan")
            writer.writerow(
                [asset, repr(h), repr(v), len(entry["vae"]), entry["failures"]]
            )
    print(f"compared Heston vs VAE on {len(corpus)} surfaces -> {args.out}")
    return 0


# --- parser -------------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="volcraft", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="quotes CSV -> surfaces CSV via smile conversion")
    p.add_argument("--quotes", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_ingest)

    p = sub.add_parser("gen-data", help="generate the synthetic surface corpus")
    p.add_argument("--spec", required=True, help="JSON asset spec document")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=_cmd_gen_data)

    p = sub.add_parser("train", help="train a VAE on a surfaces CSV")
    p.add_argument("--surfaces", required=True)
    p.add_argument("--latent-dim", type=int, required=True)
    p.add_argument("--beta", type=float, default=1e-4)
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--lambda-cal", type=float, default=0.0)
    p.add_argument("--lambda-but", type=float, default=0.0)
    p.add_argument("--decoder", choices=[vaemodel.GRID, vaemodel.POINTWISE],
                   default=vaemodel.POINTWISE)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("complete", help="sparse observations -> full surfaces + arb report")
    p.add_argument("--model", required=True)
    p.add_argument("--observations", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None, help="default: <out>.arb.json")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_complete)

    p = sub.add_parser("encode", help="latent means per surface")
    p.add_argument("--model", required=True)
    p.add_argument("--surfaces", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_encode)

    p = sub.add_parser("generate", help="sample surfaces from the latent prior")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_generate)

    p = sub.add_parser("interpolate", help="decode a bilinear walk between 4 latent corners")
    p.add_argument("--model", required=True)
    p.add_argument("--corners", required=True,
                   help="4 z vectors: 'a,b;a,b;a,b;a,b'")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_interpolate)

    p = sub.add_parser("check-arb", help="static-arbitrage report for surfaces or a decode")
    p.add_argument("--surfaces", default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--z", default=None, help="comma-separated latent vector")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_check_arb)

    p = sub.add_parser("bench-mask", help="masked-completion benchmark table")
    p.add_argument("--models", nargs="+", required=True)
    p.add_argument("--surfaces", required=True)
    p.add_argument("--ks", default="5,10,15,20,25,30,35,40")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--max-surfaces", type=int, default=None)
    p.set_defaults(fn=_cmd_bench_mask)

    p = sub.add_parser("bench-heston", help="per-asset VAE vs Heston comparison")
    p.add_argument("--surfaces", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-surfaces", type=int, default=None,
                   help="cap surfaces per asset")
    p.set_defaults(fn=_cmd_bench_heston)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except VolcraftError as exc:
        return _fail(exc)
    except OSError as exc:
        print(json.dumps({"error": "io", "message": str(exc)}), file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
