"""Command-line harness: one experiment per invocation.

    deepgeom <experiment> --config FILE [--seed N] [--out DIR]

The config file is flat ``key = value`` text; ``#`` starts a comment. Unknown
keys are rejected and environment variables are never read. Every run writes
``resolved_config.txt`` and ``summary.json`` next to its CSV outputs. Outputs
are assembled in a scratch directory and moved into place only on success.
"""
from __future__ import annotations

import argparse
import logging
import math
import shutil
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import attacks, boundary, detector, shared, topology
from .data import DatasetSpec, generate_dataset, write_dataset
from .errors import ConfigError, GeometryError, InvalidInput
from .network import Checkpoint, sphere_surrogate
from .reports import write_csv, write_json
from .seeding import rng_for, unit_vectors
from .training import Architecture, HyperParams, accuracy, train

log = logging.getLogger("deepgeom")

EXPERIMENTS = ("train", "perturb", "path", "convex-probe", "curvature", "shared-dirs", "robustness",
               "detect", "roc", "recover")


def _ints(text):
    return [int(t) for t in text.split(",") if t.strip()]


def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _opt_int(text):
    return None if text.strip().lower() in ("", "none", "all") else int(text)


def _opt_float(text):
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


COMMON = {
    "seed": (int, 0),
    "out": (str, "out"),
    "dataset": (str, "moons"),
    "d": (int, 2),
    "L": (int, 2),
    "n_train": (int, 1000),
    "n_val": (int, 500),
    "noise": (float, 0.1),
    "data_seed": (int, 0),
    "train_path": (str, ""),
    "val_path": (str, ""),
    "checkpoint": (str, ""),
    "n_samples": (_opt_int, None),
}

SPECIFIC = {
    "train": {"model": (str, "mlp"), "radius": (float, 1.0), "hidden": (_ints, [64, 64]),
              "activation": (str, "softplus"), "epochs": (int, 200), "batch_size": (int, 32),
              "learning_rate": (float, 0.05), "momentum": (float, 0.9), "weight_decay": (float, 0.0)},
    "perturb": {"overshoot": (float, attacks.OVERSHOOT), "max_iter": (int, attacks.MAX_ITER)},
    "path": {"scenario": (int, 1), "n_pairs": (int, 100), "depth_cap": (int, topology.DEPTH_CAP),
             "samples_per_segment": (int, topology.SAMPLES_PER_SEGMENT), "delta": (_opt_float, None)},
    "convex-probe": {"k_values": (_ints, [1, 2, 3, 5, 10]), "trials": (int, 500)},
    "curvature": {"k": (str, "all"), "method": (str, "auto")},
    "shared-dirs": {"n_basis_samples": (int, 100), "top_p": (int, shared.DEFAULT_TOP_P),
                    "selection": (str, "abs"), "m": (_opt_int, None), "n_eval": (int, 100),
                    "denom_samples": (int, shared.DENOM_SAMPLES), "n_directions": (int, 5),
                    "n_random": (int, 5), "image_shape": (_ints, [])},
    "robustness": {"n_basis_samples": (int, 100), "top_p": (int, shared.DEFAULT_TOP_P),
                   "selection": (str, "abs"), "subspace_dim": (_opt_int, None),
                   "magnitudes": (_floats, [0.0, 0.1, 0.2, 0.5, 1.0]), "trials": (int, 1),
                   "n_table_random": (int, 1000), "n_table_pairs": (int, 100), "n_adversarial": (int, 200),
                   "image_shape": (_ints, [])},
    "detect": {"T": (int, detector.DEFAULT_T), "threshold": (float, 0.0), "clean_class": (_opt_int, None)},
    "roc": {"T": (int, detector.DEFAULT_T), "alphas": (_floats, [1.0, 2.0, 5.0]), "clean_class": (_opt_int, None),
            "n_boot": (int, 1000)},
    "recover": {"T": (int, detector.DEFAULT_T), "threshold": (float, 0.0), "clean_class": (_opt_int, None)},
}


def parse_config_text(text: str) -> dict:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value
    return raw


def resolve_config(experiment: str, raw: dict) -> dict:
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    schema = {**COMMON, **SPECIFIC[experiment]}
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config keys for {experiment}: {', '.join(unknown)}")
    cfg = {}
    for key, (conv, default) in schema.items():
        if key in raw:
            try:
                cfg[key] = conv(raw[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {raw[key]!r}") from exc
        else:
            cfg[key] = default
    return cfg


def _fmt_value(v) -> str:
    if isinstance(v, list):
        return ",".join(_fmt_value(x) for x in v)
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def config_text(experiment: str, cfg: dict) -> str:
    lines = [f"# resolved configuration for '{experiment}'"]
    lines += [f"{k} = {_fmt_value(cfg[k])}" for k in sorted(cfg)]
    return "\n".join(lines) + "\n"


def dataset_spec(cfg) -> DatasetSpec:
    return DatasetSpec(cfg["dataset"], cfg["d"], cfg["L"], cfg["n_train"], cfg["n_val"], cfg["noise"],
                       cfg["data_seed"], cfg["train_path"], cfg["val_path"])


def load_model(cfg):
    path = cfg["checkpoint"]
    if not path:
        raise ConfigError("this experiment needs 'checkpoint'")
    if not Path(path).is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return Checkpoint.load(path).model


def _samples(cfg, X):
    n = cfg["n_samples"]
    return X if n is None else X[:n]


# ---------------------------------------------------------------- experiments

def run_train(cfg, out: Path):
    spec = dataset_spec(cfg)
    tr, va = generate_dataset(spec)
    write_dataset(tr, out / "train.csv")
    write_dataset(va, out / "val.csv")
    if cfg["model"] == "sphere":
        model = sphere_surrogate(tr.dim, cfg["radius"])
        meta = {"dataset": spec.id, "seed": cfg["seed"], "epochs": 0, "model": "sphere", "radius": cfg["radius"],
                "train_accuracy": accuracy(model, tr),
                "validation_accuracy": accuracy(model, va) if len(va) else None}
        ck = Checkpoint(model, meta)
    elif cfg["model"] == "mlp":
        hp = HyperParams(cfg["epochs"], cfg["batch_size"], cfg["learning_rate"], cfg["momentum"], cfg["weight_decay"])
        ck = train(tr, Architecture(tuple(cfg["hidden"]), cfg["activation"]), hp, seed=cfg["seed"],
                   validation=va if len(va) else None, dataset_id=spec.id)
    else:
        raise ConfigError(f"model must be 'mlp' or 'sphere', got {cfg['model']!r}")
    ck.save(out / "checkpoint.json")
    return {"train_accuracy": ck.metadata.get("train_accuracy"),
            "validation_accuracy": ck.metadata.get("validation_accuracy")}


def run_perturb(cfg, out):
    model = load_model(cfg)
    _, va = generate_dataset(dataset_spec(cfg))
    X = _samples(cfg, va.X)
    results = attacks.perturb_batch(model, X, cfg["overshoot"], cfg["max_iter"])
    attacks.export_perturbations(out / "perturbations.csv", results)
    norms = [r.norm for r in results if r.succeeded]
    return {"success_rate": float(np.mean([r.succeeded for r in results])),
            "median_norm": float(np.median(norms)) if norms else None, "count": len(results)}


def run_path(cfg, out):
    model = load_model(cfg)
    _, va = generate_dataset(dataset_spec(cfg))
    summaries = topology.run_scenario(model, cfg["scenario"], va, cfg["n_pairs"], cfg["seed"], cfg["depth_cap"],
                                      cfg["samples_per_segment"], cfg["delta"])
    topology.export_scenario(out / "paths.csv", summaries)
    return {"success_fraction": float(np.mean([s.success for s in summaries])),
            "max_depth": max(s.depth for s in summaries), "pairs": len(summaries)}


def run_convex_probe(cfg, out):
    model = load_model(cfg)
    _, va = generate_dataset(dataset_spec(cfg))
    rep = topology.convex_probe(model, _samples(cfg, va.X), cfg["k_values"], cfg["trials"], cfg["seed"])
    topology.export_probe(out / "probe.csv", rep)
    return {"probabilities": dict(zip(map(str, rep.k_values), rep.probabilities))}


def run_curvature(cfg, out):
    model = load_model(cfg)
    _, va = generate_dataset(dataset_spec(cfg))
    k = cfg["k"] if cfg["k"] == "all" else int(cfg["k"])
    profiles, rows, skipped = [], [], 0
    for sid, x in enumerate(_samples(cfg, va.X)):
        try:
            bp = boundary.locate_boundary_point(model, x)
            prof = boundary.principal_curvatures(model, bp, k=k, method=cfg["method"], seed=cfg["seed"])
        except GeometryError:
            skipped += 1
            continue
        profiles.append(prof)
        rows += [(sid, idx + 1, kap) for idx, kap in enumerate(prof.principal_curvatures)]
    if not profiles:
        raise InvalidInput("no sample reached the decision boundary")
    write_csv(out / "profiles.csv", ["sample_id", "index", "kappa"], rows)
    boundary.export_mean_profile(out / "mean_profile.csv", profiles)
    means = [p.mean_curvature for p in profiles]
    return {"points": len(profiles), "skipped": skipped, "mean_of_mean_curvature": float(np.mean(means))}


def _basis(cfg, model, tr):
    return shared.build_shared_basis(model, tr.X[:cfg["n_basis_samples"]], cfg["top_p"], cfg.get("m"),
                                     cfg["seed"], cfg["selection"])


def run_shared_dirs(cfg, out):
    model = load_model(cfg)
    tr, va = generate_dataset(dataset_spec(cfg))
    basis = _basis(cfg, model, tr)
    shared.export_basis(out / "basis.csv", basis, out / "singular_values.csv")
    if cfg["image_shape"]:
        shared.export_basis_images(out / "basis_images", basis, tuple(cfg["image_shape"]), cfg["n_directions"])
    pts, skipped = shared.boundary_points(model, va.X[:cfg["n_eval"]])
    nd = min(cfg["n_directions"], basis.m)
    mean, se, R = shared.rho_profile(model, pts, basis.U[:, :nd], cfg["denom_samples"], cfg["seed"])
    shared.export_rho(out / "rho.csv", mean, se)
    rand = unit_vectors(rng_for(cfg["seed"], "select"), cfg["n_random"], tr.dim).T
    rmean, rse, _ = shared.rho_profile(model, pts, rand, cfg["denom_samples"], cfg["seed"])
    shared.export_rho(out / "rho_random.csv", rmean, rse)
    per_point = R.mean(axis=1)
    return {"basis_samples": basis.n_samples, "basis_skipped": basis.skipped, "eval_points": len(pts),
            "eval_skipped": skipped, "mean_rho_top": float(per_point.mean()),
            "stderr_rho_top": float(per_point.std(ddof=1) / math.sqrt(len(per_point))),
            "mean_rho_random": float(rmean.mean())}


def run_robustness(cfg, out):
    model = load_model(cfg)
    tr, va = generate_dataset(dataset_spec(cfg))
    basis = _basis(cfg, model, tr)
    sub = shared.subspace(basis, cfg["subspace_dim"])
    X = _samples(cfg, va.X)
    curves = shared.noise_robustness_split(model, X, sub, cfg["magnitudes"], cfg["trials"], cfg["seed"],
                                           typical_norm=va.typical_norm())
    shared.export_noise(out / "noise.csv", curves)
    shape = tuple(cfg["image_shape"]) or None
    rows = shared.table1_analogue(model, sub, va, cfg["seed"], cfg["n_table_random"], cfg["n_table_pairs"],
                                  cfg["n_adversarial"], shape)
    shared.export_table1(out / "table1.csv", rows)
    return {"subspace_dim": sub.dim, "d": sub.ambient_dim,
            "table1": {r.source: r.mean for r in rows},
            "rate_S_at_max": curves.rate_in_S[-1],
            "rate_S_perp_at_max": None if curves.rate_in_perp is None else curves.rate_in_perp[-1]}


def _clean_and_perturbed(cfg, model):
    _, va = generate_dataset(dataset_spec(cfg))
    X, y = va.X, va.y
    if cfg["clean_class"] is not None:
        keep = model.predict(X) == cfg["clean_class"]
        X, y = X[keep], y[keep]
    X, y = _samples(cfg, X), _samples(cfg, y)
    results = attacks.perturb_batch(model, X)
    ok = [k for k, r in enumerate(results) if r.succeeded]
    return X, y, [results[k] for k in ok], np.array([X[k] for k in ok])


def run_detect(cfg, out):
    model = load_model(cfg)
    X, y, results, Xo = _clean_and_perturbed(cfg, model)
    Xp = np.array([x + r.r for x, r in zip(Xo, results)])
    clean = detector.detect_batch(model, X, cfg["T"], cfg["threshold"], cfg["seed"], 0)
    pert = detector.detect_batch(model, Xp, cfg["T"], cfg["threshold"], cfg["seed"], len(X))
    orig = [int(l) for l in model.predict(X)]
    detector.export_verdicts(out / "verdicts_clean.csv", clean, list(y), orig)
    yo = [None] * len(results)
    detector.export_verdicts(out / "verdicts_perturbed.csv", pert, yo, [r.orig_label for r in results],
                             ids=range(len(X), len(X) + len(pert)))
    c = np.array([v.rho for v in clean])
    p = np.array([v.rho for v in pert])
    return {"auc": detector.auc(c, p), "clean_flagged": float(np.mean([v.perturbed for v in clean])),
            "perturbed_flagged": float(np.mean([v.perturbed for v in pert])), "clean": len(c), "perturbed": len(p)}


def run_roc(cfg, out):
    model = load_model(cfg)
    X, _, results, Xo = _clean_and_perturbed(cfg, model)
    sweep = detector.alpha_sweep(model, X, Xo, [r.r for r in results], cfg["alphas"], cfg["T"], cfg["seed"])
    base = sweep.get(1.0) or next(iter(sweep.values()))
    detector.export_roc(out / "roc.csv", base)
    detector.export_alpha_sweep(out / "alpha_sweep.csv", sweep)
    lo, hi = detector.bootstrap_auc(base.clean_scores, base.perturbed_scores, cfg["n_boot"], cfg["seed"])
    return {"auc": base.auc, "auc_ci95": [lo, hi], "auc_by_alpha": {repr(a): r.auc for a, r in sweep.items()}}


def run_recover(cfg, out):
    model = load_model(cfg)
    _, _, results, Xo = _clean_and_perturbed(cfg, model)
    Xp = np.array([x + r.r for x, r in zip(Xo, results)])
    orig = [r.orig_label for r in results]
    rep = detector.recover_labels(model, Xp, orig, cfg["T"], cfg["threshold"], cfg["seed"])
    detector.export_verdicts(out / "recovery.csv", rep.verdicts, None, orig)
    return {"recovery_accuracy": rep.accuracy, "flagged": rep.flagged, "total": rep.total}


RUNNERS = {"train": run_train, "perturb": run_perturb, "path": run_path, "convex-probe": run_convex_probe,
           "curvature": run_curvature, "shared-dirs": run_shared_dirs, "robustness": run_robustness,
           "detect": run_detect, "roc": run_roc, "recover": run_recover}


def run(experiment: str, cfg: dict) -> dict:
    """Run one experiment; outputs appear in ``cfg['out']`` only if it succeeds."""
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=".deepgeom-", dir=out.parent))
    try:
        start = time.perf_counter()
        metrics = RUNNERS[experiment](cfg, scratch)
        (scratch / "resolved_config.txt").write_text(config_text(experiment, cfg), encoding="utf-8")
        summary = {"experiment": experiment, "params": {k: cfg[k] for k in sorted(cfg)}, "metrics": metrics,
                   "wall_time_s": time.perf_counter() - start}
        write_json(scratch / "summary.json", summary)
        out.mkdir(parents=True, exist_ok=True)
        for item in sorted(scratch.iterdir()):
            target = out / item.name
            if target.is_dir():
                shutil.rmtree(target)
            shutil.move(str(item), str(target))
        return summary
    finally:
        shutil.rmtree(scratch, ignore_errors=True)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="deepgeom", description=__doc__.splitlines()[0])
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", required=True, help="flat key = value file")
    parser.add_argument("--seed", type=int, help="overrides the config's seed")
    parser.add_argument("--out", help="overrides the config's output directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        raw = parse_config_text(Path(args.config).read_text(encoding="utf-8"))
        if args.seed is not None:
            raw["seed"] = str(args.seed)
        if args.out is not None:
            raw["out"] = args.out
        cfg = resolve_config(args.experiment, raw)
        summary = run(args.experiment, cfg)
    except (GeometryError, OSError) as exc:
        print(f"deepgeom: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    log.info("wrote %s", cfg["out"])
    print(f"{args.experiment}: " + ", ".join(f"{k}={v}" for k, v in summary["metrics"].items()))
    return 0


if __name__ == "__main__":
    sys.exit(main())
