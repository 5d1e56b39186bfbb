"""Command-line workbench: align, train, attack, defend, eval, export-gram, synth, replay.

Every command writes a run manifest next to its outputs. The manifest
records the resolved configuration, seeds, input hashes and the sha256 of
every artifact, so ``qadv replay MANIFEST`` can re-run the command and
confirm the outputs are byte-identical.

Exit codes: 0 ok, 1 replay mismatch, 2 configuration, 3 data, 4 solver,
5 no successful adversarial example.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import shlex
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, _backend
from .adversary import (AltAttackConfig, AttackConfig, attack, attack_alt, augment,
                        read_results_csv, save_results_csv)
from .alignment import AlignmentConfig, align
from .featuremap import DimensionError, FeatureMapSpec, check_params, compact_map, large_map
from .fileio import atomic_write_text, sha256_file, write_json, write_pgm
from .pipeline import (DataError, Dataset, Preprocessor, load_dataset, stratified_split,
                       synth_dataset)
from .qkernel import GradientMode, GramCache, ShotConfig, gram_matrix
from .svm import (DEFAULT_C_GRID, SolverError, SvmModel, classification_metrics, fit,
                  kfold_select_C)

log = logging.getLogger("qadv")

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_DATA, EXIT_SOLVER, EXIT_NO_ADV = 0, 1, 2, 3, 4, 5

THETA_FORMAT = "qadv.theta"
MANIFEST_FORMAT = "qadv.manifest"
#: F1 is reported for label +1, which the loaders give to the alphabetically first class.
POSITIVE_LABEL = 1.0


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# manifests


class RunManifest:
    def __init__(self, command: str, config: dict):
        self.command = command
        self.config = config
        self.seeds: dict[str, int] = {}
        self.datasets: dict[str, str] = {}
        self.spec_hash: str | None = None
        self.timings: dict[str, float] = {}
        self.artifacts: dict[str, str] = {}
        self._t0 = time.perf_counter()

    def time(self, label: str):
        now = time.perf_counter()
        self.timings[label] = round(now - self._t0, 6)
        self._t0 = now

    def add(self, path) -> Path:
        path = Path(path)
        self.artifacts[str(path.resolve())] = sha256_file(path)
        return path

    def to_dict(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "version": 1,
            "qadv_version": __version__,
            "backend": _backend.BACKEND,
            "command": self.command,
            "config": self.config,
            "seeds": self.seeds,
            "dataset_hashes": self.datasets,
            "feature_map_hash": self.spec_hash,
            "timings": self.timings,
            "artifacts": self.artifacts,
        }

    def save(self, path) -> Path:
        return write_json(path, self.to_dict())


def _manifest_path(command: str, out: Path) -> Path:
    if command in ("attack", "synth"):
        return out / "manifest.json"
    if command == "export-gram":
        return out.with_name(out.name + ".manifest.json")
    return out.with_name(out.stem + ".manifest.json")


def _sibling(out: Path, suffix: str) -> Path:
    return out.with_name(out.stem + suffix)


# ---------------------------------------------------------------------------
# config files and argument parsing


def read_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment; surrounding quotes are stripped."""
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line or line.startswith("["):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "'\"":
            value = value[1:-1]
        values[key.replace("-", "_")] = value
    return values


def _c_grid(text: str) -> tuple[float, ...]:
    try:
        grid = tuple(float(v) for v in text.replace(" ", "").strip("[]").split(",") if v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid C grid {text!r}")
    if not grid or any(c <= 0 for c in grid):
        raise argparse.ArgumentTypeError("C grid needs positive values")
    return grid


def _split(text: str) -> tuple[str, float]:
    """``A:B`` counts or a single training fraction in (0, 1]."""
    if ":" in text:
        a, b = text.split(":", 1)
        if not (a.isdigit() and b.isdigit()):
            raise argparse.ArgumentTypeError(f"invalid split {text!r}")
        return ("counts", (int(a), int(b)))
    try:
        frac = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid split {text!r}")
    if not 0.0 <= frac <= 1.0:
        raise argparse.ArgumentTypeError("split fraction must lie in [0, 1]")
    return ("fraction", frac)


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid size {text!r}, expected HxW")
    return h, w


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return v


def _add_map(p):
    p.add_argument("--map", choices=("large", "compact"), default="compact")
    p.add_argument("--qubits", type=_positive_int, default=10, help="compact map only")
    p.add_argument("--blocks", type=_positive_int, default=4, help="compact map only")
    p.add_argument("--layers", type=_positive_int, default=2, help="rotation layers per compact block")


def _add_common(p):
    p.add_argument("--config", help="key = value file; explicit flags win")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=_size, default=(16, 16), help="image resize target HxW")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qadv", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--version", action="version", version=f"qadv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("align", help="optimise the feature-map angles")
    _add_common(p)
    _add_map(p)
    p.add_argument("--data", required=True)
    p.add_argument("--iters", type=_positive_int, default=80)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--perturb", type=float, default=0.05)
    p.add_argument("--loss", choices=("svc_loss", "target_alignment"), default="svc_loss")
    p.add_argument("--C", type=float, default=1.0, dest="C")
    p.add_argument("--out", required=True, help="angles JSON; the loss trace goes next to it")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("train", help="fit the SVM on an aligned kernel")
    _add_common(p)
    p.add_argument("--theta", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--test", help="optional held-out set for the metrics file")
    p.add_argument("--kfold", type=int, default=5)
    p.add_argument("--c-grid", type=_c_grid, default=DEFAULT_C_GRID)
    p.add_argument("--bias", choices=("mean", "support"), default="mean")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="craft adversarial examples")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--count", type=_positive_int, default=50)
    p.add_argument("--only-correct", action="store_true",
                   help="attack only samples the model classifies correctly")
    p.add_argument("--eta", type=float, default=0.01)
    p.add_argument("--max-iters", type=_positive_int, default=50)
    p.add_argument("--mode", choices=("adaptive", "constant", "alt"), default="adaptive")
    p.add_argument("--gradient", choices=[m.value for m in GradientMode],
                   default=GradientMode.EXACT_SHIFT.value)
    p.add_argument("--epsilon", type=float, default=3.0)
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--budget", type=_positive_int, default=5000)
    p.add_argument("--step", type=float, default=0.01, help="alt mode step size")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("defend", help="retrain with adversarial examples")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--adv", required=True, help="directory written by attack")
    p.add_argument("--test", required=True, help="clean held-out set")
    p.add_argument("--split", type=_split, default=_split("41:9"),
                   help="adversarials for train:test, or a training fraction")
    p.add_argument("--kfold", type=int, default=5)
    p.add_argument("--c-grid", type=_c_grid, default=DEFAULT_C_GRID)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_defend)

    p = sub.add_parser("eval", help="score a model on a dataset")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--shots", type=int, default=None,
                   help="estimate kernels from this many shots (1024 emulates hardware)")
    p.add_argument("--out", help="optional metrics JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-gram", help="write the Gram matrix as CSV and PGM")
    _add_common(p)
    p.add_argument("--theta", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="path prefix; .csv and .pgm are appended")
    p.set_defaults(func=cmd_export_gram)

    p = sub.add_parser("synth", help="write a synthetic two-class dataset as train/test CSVs")
    p.add_argument("--config", help="key = value file; explicit flags win")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--per-class", type=_positive_int, default=40)
    p.add_argument("--dim", type=_positive_int, default=16)
    p.add_argument("--separation", type=float, default=8.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--intrinsic-dim", type=_positive_int, default=None)
    p.add_argument("--floor-noise", type=float, default=0.0)
    p.add_argument("--n-test", type=int, default=20, help="number of held-out samples")
    p.add_argument("--out", required=True, help="directory for train.csv and test.csv")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("replay", help="re-run a manifest and compare output hashes")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    parser.subcommands = sub.choices
    return parser


def _prescan(argv, commands) -> tuple[str | None, str | None]:
    command = next((a for a in argv if a in commands), None)
    config = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            config = argv[i + 1]
        elif a.startswith("--config="):
            config = a.split("=", 1)[1]
    return command, config


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    command, config = _prescan(argv, parser.subcommands)
    if command is not None and config is not None:
        values = read_config(config)
        sub = parser.subcommands[command]
        known = {a.dest: a for a in sub._actions}
        unknown = sorted(set(values) - set(known) - {"config", "help"})
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        defaults = {}
        for key, value in values.items():
            action = known[key]
            if isinstance(action, argparse._StoreTrueAction):
                defaults[key] = value.lower() in ("1", "true", "yes", "on")
            else:
                # string defaults still go through the action's type conversion
                defaults[key] = value
            action.required = False
        sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _resolved_config(args) -> dict:
    cfg = {}
    for key, value in sorted(vars(args).items()):
        if key in ("func", "config", "verbose"):
            continue
        if key in ("data", "test", "theta", "model", "adv", "out") and value is not None:
            value = str(Path(value).resolve())
        if isinstance(value, tuple):
            value = list(value) if key != "split" else [value[0], value[1]]
        cfg[key] = value
    return cfg


def _argv_from_config(command: str, cfg: dict) -> list[str]:
    argv = [command]
    for key, value in cfg.items():
        if key in ("command",) or value is None:
            continue
        flag = "--" + key.replace("_", "-") if key != "C" else "--C"
        if isinstance(value, bool):
            if value:
                argv.append(flag)
            continue
        if key == "split":
            kind, v = value
            value = f"{v[0]}:{v[1]}" if kind == "counts" else str(v)
        elif key == "size":
            value = f"{value[0]}x{value[1]}"
        elif key == "c_grid":
            value = ",".join(repr(float(c)) for c in value)
        argv += [flag, str(value)]
    return argv


# ---------------------------------------------------------------------------
# shared loaders


def _spec_from_args(args) -> FeatureMapSpec:
    if args.map == "large":
        return large_map()
    return compact_map(args.qubits, args.blocks, args.layers)


def _load(path, size, manifest: RunManifest | None = None, role: str = "data") -> Dataset:
    ds = load_dataset(path, size)
    if len(ds) == 0:
        raise DataError(f"{path} holds no samples")
    if manifest is not None:
        manifest.datasets[role] = ds.digest()
    return ds


def _read_json(path, what: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read {what} {path}: {exc}") from exc


def load_theta(path) -> tuple[FeatureMapSpec, np.ndarray, Preprocessor, dict]:
    doc = _read_json(path, "angles file")
    if doc.get("format") != THETA_FORMAT:
        raise ConfigError(f"{path} is not a {THETA_FORMAT} document")
    try:
        spec = FeatureMapSpec.from_dict(doc["feature_map"])
        theta = check_params(spec, doc["params"])
        pre = Preprocessor.from_dict(doc["preprocess"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid angles file {path}: {exc}") from exc
    return spec, theta, pre, doc


def load_model(path) -> tuple[SvmModel, Preprocessor]:
    doc = _read_json(path, "model")
    try:
        model = SvmModel.from_dict(doc)
        pre = Preprocessor.from_dict(model.preprocess) if model.preprocess else None
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid model {path}: {exc}") from exc
    if pre is None:
        pre = Preprocessor(model.spec.data_dim, model.spec.data_dim)
    return model, pre


def _transform(pre: Preprocessor, ds: Dataset) -> np.ndarray:
    if ds.dim != pre.input_dim:
        raise DataError(f"dataset has {ds.dim} features, the model expects {pre.input_dim}")
    return pre.transform(ds.samples)


def _metrics(model: SvmModel, X, y) -> dict:
    return classification_metrics(y, model.predict(X), positive=POSITIVE_LABEL)


def _select_and_fit(spec, theta, X, y, kfold, c_grid, seed, bias_mode):
    if not (np.any(y > 0) and np.any(y < 0)):
        raise DataError("training data must contain both classes")
    K = gram_matrix(spec, theta, X, cache=GramCache.from_env())
    K.check()
    if kfold >= 2:
        C, scores = kfold_select_C(spec, theta, X, y, kfold, c_grid, seed=seed,
                                   bias_mode=bias_mode, K=K)
    else:
        C, scores = float(min(c_grid)), {}
    model = fit(spec, theta, X, y, C, bias_mode=bias_mode, K=K)
    return model, C, scores


# ---------------------------------------------------------------------------
# commands


def cmd_align(args, manifest: RunManifest) -> int:
    if args.lr <= 0 or args.perturb <= 0:
        raise ConfigError("--lr and --perturb must be positive")
    spec = _spec_from_args(args)
    ds = _load(args.data, args.size, manifest)
    pre = Preprocessor.fit(ds.samples, spec.data_dim)
    X = pre.transform(ds.samples)
    manifest.spec_hash = spec.digest()
    manifest.seeds["spsa"] = args.seed
    manifest.time("load")

    cfg = AlignmentConfig(iterations=args.iters, learning_rate=args.lr, perturbation=args.perturb,
                          seed=args.seed, loss_kind=args.loss, C=args.C)
    theta, trace = align(spec, X, ds.labels, cfg, cache=GramCache.from_env())
    manifest.time("align")
    best_loss = min(trace.losses) if trace.losses else None

    out = Path(args.out)
    doc = {
        "format": THETA_FORMAT,
        "version": 1,
        "feature_map": spec.to_dict(),
        "params": [float(t) for t in theta],
        "preprocess": pre.to_dict(),
        "class_names": {str(k): v for k, v in ds.class_names.items()},
        "loss_kind": cfg.loss_kind.value,
        "best_loss": best_loss,
        "iterations": len(trace),
    }
    manifest.add(write_json(out, doc))
    manifest.add(trace.save_csv(_sibling(out, ".trace.csv")))
    # wall-clock times are kept apart so the trace itself stays reproducible
    atomic_write_text(_sibling(out, ".timing.csv"), trace.timing_csv())
    log.info("align: %d iterations, best loss %s", len(trace), best_loss)
    return EXIT_OK


def cmd_train(args, manifest: RunManifest) -> int:
    spec, theta, pre, doc = load_theta(args.theta)
    ds = _load(args.data, args.size, manifest)
    X = _transform(pre, ds)
    manifest.spec_hash = spec.digest()
    manifest.seeds["folds"] = args.seed
    manifest.time("load")

    model, C, scores = _select_and_fit(spec, theta, X, ds.labels, args.kfold, args.c_grid,
                                       args.seed, args.bias)
    model.preprocess = pre.to_dict()
    model.class_names = doc.get("class_names") or {str(k): v for k, v in ds.class_names.items()}
    manifest.time("fit")

    metrics = {"C": C, "cv_accuracy": {repr(c): s for c, s in scores.items()},
               "train": _metrics(model, X, ds.labels), "report": vars(model.report),
               "positive_label": int(POSITIVE_LABEL)}
    if args.test:
        test = _load(args.test, args.size, manifest, "test")
        metrics["test"] = _metrics(model, _transform(pre, test), test.labels)
    out = Path(args.out)
    manifest.add(write_json(out, model.to_dict()))
    manifest.add(write_json(_sibling(out, ".metrics.json"), metrics))
    log.info("train: C=%g, train accuracy %.4f", C, metrics["train"]["accuracy"])
    return EXIT_OK


def _panel_shape(pre: Preprocessor) -> tuple[int, int] | None:
    side = math.isqrt(pre.input_dim)
    return (side, side) if side * side == pre.input_dim else None


def _write_panels(out: Path, results, raw: np.ndarray, pre: Preprocessor, manifest) -> None:
    shape = _panel_shape(pre)
    if shape is None:
        return
    for r, x_raw in zip(results, raw):
        delta = (pre.inverse(r.x_adv) - pre.inverse(r.x_original))[0]
        x_adv = x_raw + delta
        lo = float(min(x_raw.min(), x_adv.min()))
        hi = float(max(x_raw.max(), x_adv.max()))
        span = float(np.abs(delta).max()) or 1.0
        stem = r.sample_id.replace("/", "_")
        panels = out / "panels"
        manifest.add(write_pgm(panels / f"{stem}_x.pgm", x_raw.reshape(shape), lo, hi))
        manifest.add(write_pgm(panels / f"{stem}_xadv.pgm", x_adv.reshape(shape), lo, hi))
        manifest.add(write_pgm(panels / f"{stem}_delta.pgm", delta.reshape(shape), -span, span))


def _stats(values) -> dict:
    if not values:
        return {"mean": None, "median": None, "max": None}
    a = np.asarray(values, dtype=float)
    return {"mean": float(a.mean()), "median": float(np.median(a)), "max": float(a.max())}


def cmd_attack(args, manifest: RunManifest) -> int:
    model, pre = load_model(args.model)
    ds = _load(args.data, args.size, manifest)
    X = _transform(pre, ds)
    manifest.spec_hash = model.spec.digest()
    manifest.time("load")

    idx = np.arange(len(ds))
    if args.only_correct:
        idx = idx[model.predict(X) == ds.labels]
    idx = idx[:args.count]
    if idx.size == 0:
        raise DataError("no samples to attack")

    if args.mode == "alt":
        cfg = AltAttackConfig(epsilon=args.epsilon, mu=args.mu, budget=args.budget, step=args.step,
                              gradient_mode=args.gradient)
        run = lambda x, y, sid: attack_alt(model, x, y, cfg, sid)  # noqa: E731
    else:
        cfg = AttackConfig(max_iterations=args.max_iters, eta_constant=args.eta,
                           eta_mode=args.mode, gradient_mode=args.gradient)
        run = lambda x, y, sid: attack(model, x, y, cfg, sid)  # noqa: E731
    results = [run(X[i], ds.labels[i], ds.ids[i]) for i in idx]
    manifest.time("attack")

    out = Path(args.out)
    ok = [r for r in results if r.success]
    summary = {
        "mode": args.mode,
        "attacked": len(results),
        "successes": len(ok),
        "success_rate": len(ok) / len(results),
        "iterations": _stats([r.iterations_used for r in ok]),
        "l2": _stats([r.perturbation_l2 for r in ok]),
        "ids": [r.sample_id for r in results],
    }
    manifest.add(save_results_csv(out / "adversarial.csv", results))
    manifest.add(write_json(out / "summary.json", summary))
    _write_panels(out, results, ds.samples[idx], pre, manifest)
    log.info("attack: %d/%d flipped", len(ok), len(results))
    if not ok:
        log.error("no adversarial example succeeded")
        return EXIT_NO_ADV
    return EXIT_OK


def _adv_split(spec, n: int) -> tuple[int, int]:
    kind, value = spec
    if kind == "counts":
        return value
    n_train = int(round(value * n))
    return n_train, n - n_train


class _Adv:
    """Minimal stand-in for an attack result rebuilt from the adversarial CSV."""

    def __init__(self, row):
        self.x_adv = row["x_adv"]
        self.y_true = row["y_true"]
        self.success = row["success"]


def cmd_defend(args, manifest: RunManifest) -> int:
    model, pre = load_model(args.model)
    rows = [r for r in read_results_csv(Path(args.adv) / "adversarial.csv") if r["success"]]
    if not rows:
        raise DataError(f"{args.adv} holds no successful adversarial examples")
    test = _load(args.test, args.size, manifest, "test")
    X_test = _transform(pre, test)
    adv = [_Adv(r) for r in rows]
    if any(a.x_adv.size != model.spec.data_dim for a in adv):
        raise DataError("adversarial vectors do not match the model's input dimension")
    split = _adv_split(args.split, len(adv))
    if sum(split) != len(adv):
        raise ConfigError(f"split {split[0]}:{split[1]} does not sum to {len(adv)} adversarial examples")
    manifest.datasets["adversarial"] = sha256_file(Path(args.adv) / "adversarial.csv")
    manifest.spec_hash = model.spec.digest()
    manifest.seeds["augment"] = args.seed
    manifest.time("load")

    tx, ty, sx, sy, tr_idx, te_idx = augment(model.X_train, model.labels, adv, X_test, test.labels,
                                             split, seed=args.seed)
    model2, C, scores = _select_and_fit(model.spec, model.params, tx, ty, args.kfold, args.c_grid,
                                        args.seed, model.bias_mode)
    model2.preprocess = model.preprocess
    model2.class_names = model.class_names
    manifest.time("fit")

    held_x = sx[len(test):]
    held_y = sy[len(test):]
    metrics = {
        "C": C,
        "cv_accuracy": {repr(c): s for c, s in scores.items()},
        "split": list(split),
        "adv_train_ids": [rows[i]["id"] for i in tr_idx],
        "adv_test_ids": [rows[i]["id"] for i in te_idx],
        "before": {"test": _metrics(model, X_test, test.labels), "extended_test": _metrics(model, sx, sy)},
        "after": {"test": _metrics(model2, X_test, test.labels), "extended_test": _metrics(model2, sx, sy)},
        "positive_label": int(POSITIVE_LABEL),
    }
    if held_y.size:
        metrics["before"]["adversarial_test"] = _metrics(model, held_x, held_y)
        metrics["after"]["adversarial_test"] = _metrics(model2, held_x, held_y)
    out = Path(args.out)
    manifest.add(write_json(out, model2.to_dict()))
    manifest.add(write_json(_sibling(out, ".metrics.json"), metrics))
    log.info("defend: extended-test accuracy %.4f -> %.4f",
             metrics["before"]["extended_test"]["accuracy"], metrics["after"]["extended_test"]["accuracy"])
    return EXIT_OK


def cmd_eval(args, manifest: RunManifest) -> int:
    model, pre = load_model(args.model)
    ds = _load(args.data, args.size, manifest)
    X = _transform(pre, ds)
    shots = None
    if args.shots is not None:
        if args.shots < 1:
            raise ConfigError("--shots must be positive")
        shots = ShotConfig(args.shots, args.seed)
        manifest.seeds["shots"] = args.seed
    manifest.spec_hash = model.spec.digest()
    pred = model.predict(X, shots=shots)
    metrics = classification_metrics(ds.labels, pred, positive=POSITIVE_LABEL)
    metrics["shots"] = args.shots
    metrics["positive_label"] = int(POSITIVE_LABEL)
    manifest.time("eval")
    print(json.dumps(metrics, indent=2, sort_keys=True))
    if args.out:
        manifest.add(write_json(args.out, metrics))
    return EXIT_OK


def cmd_export_gram(args, manifest: RunManifest) -> int:
    spec, theta, pre, _ = load_theta(args.theta)
    ds = _load(args.data, args.size, manifest)
    K = gram_matrix(spec, theta, _transform(pre, ds), ids=ds.ids, cache=GramCache.from_env())
    K.check()
    manifest.spec_hash = spec.digest()
    out = Path(args.out)
    manifest.add(K.save_csv(out.with_name(out.name + ".csv")))
    manifest.add(K.save_pgm(out.with_name(out.name + ".pgm")))
    atomic_write_text(out.with_name(out.name + ".ids.txt"), "\n".join(ds.ids) + "\n")
    manifest.time("gram")
    return EXIT_OK


def cmd_synth(args, manifest: RunManifest) -> int:
    ds = synth_dataset(args.per_class, args.dim, args.separation, seed=args.seed, noise=args.noise,
                       intrinsic_dim=args.intrinsic_dim, floor_noise=args.floor_noise)
    if not 0 <= args.n_test < len(ds):
        raise ConfigError(f"--n-test must lie in [0, {len(ds)})")
    train, test = stratified_split(ds, args.n_test, seed=args.seed)
    manifest.seeds["synth"] = args.seed
    out = Path(args.out)
    manifest.add(train.save_csv(out / "train.csv"))
    if len(test):
        manifest.add(test.save_csv(out / "test.csv"))
    return EXIT_OK


def cmd_replay(args, manifest=None) -> int:
    doc = _read_json(args.manifest, "manifest")
    if doc.get("format") != MANIFEST_FORMAT:
        raise ConfigError(f"{args.manifest} is not a run manifest")
    recorded = doc["artifacts"]
    argv = _argv_from_config(doc["command"], doc["config"])
    log.info("replay: qadv %s", shlex.join(argv))
    code = main(argv)
    if code != EXIT_OK:
        return code
    mismatched = [p for p, h in recorded.items() if not Path(p).exists() or sha256_file(p) != h]
    for p in mismatched:
        print(f"MISMATCH {p}")
    print(f"replay: {len(recorded) - len(mismatched)}/{len(recorded)} artifacts identical")
    return EXIT_MISMATCH if mismatched else EXIT_OK


# ---------------------------------------------------------------------------


def _setup_logging(verbosity: int) -> None:
    level = logging.WARNING - 10 * min(verbosity, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except ConfigError as exc:
        print(f"qadv: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:
        return int(exc.code or 0)
    _setup_logging(args.verbose)

    if args.command == "replay":
        manifest = None
    else:
        manifest = RunManifest(args.command, _resolved_config(args))
    try:
        code = args.func(args, manifest)
    except ConfigError as exc:
        print(f"qadv: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DimensionError, FileNotFoundError) as exc:
        print(f"qadv: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SolverError as exc:
        print(f"qadv: solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"qadv: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if manifest is not None and manifest.artifacts:
        out = Path(args.out)
        manifest.save(_manifest_path(args.command, out))
    return code


if __name__ == "__main__":
    sys.exit(main())
