"""Command-line entry point: ``pssrlab <command> --seed N --out DIR ...``.

Every run writes ``manifest.json`` into its output directory. Running
``pssrlab replay DIR/manifest.json [--out OTHER]`` repeats the run with the
recorded arguments.
"""
from __future__ import annotations

import argparse
import csv
import glob
import json
import os
import sys

from . import __version__
from . import degradation as dg
from . import pssr
from . import rankmos as rm
from . import srqa_net as qn
from .stereo_image import StereoPair, gen_scene, load_pair, save_pair

PATH_ARGS = ("scenes", "versions", "labels", "model", "qa", "input", "config")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ------------------------------------------------------------------ helpers

def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _prefixes(directory, pattern):
    """Sorted pair prefixes ``<dir>/<name>`` for files matching ``<pattern>_L.ppm``."""
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"no such directory: {directory}")
    found = sorted(glob.glob(os.path.join(directory, f"{pattern}_L.ppm")))
    if not found:
        raise FileNotFoundError(f"no stereo pairs matching {pattern}_L.ppm in {directory}")
    return [f[: -len("_L.ppm")] for f in found]


def _load_scenes(directory):
    return [load_pair(p) for p in _prefixes(directory, "scene*")]


def _version_prefix(directory, i, j):
    return os.path.join(directory, f"ref{i:03d}_v{j:03d}")


def _load_versions(directory, n_refs):
    cat = _read_json(os.path.join(directory, "catalog.json"))
    n = len(cat["specs"])
    return [[load_pair(_version_prefix(directory, i, j)) for j in range(n)] for i in range(n_refs)]


def _float_list(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _int_list(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _csv_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v):
    return repr(float(v))


def _qa_config(args):
    cfg = _read_json(args.config) if args.config else {}
    cfg["patch_size"] = args.patch_size
    if "widths" in cfg:
        cfg["widths"] = tuple(cfg["widths"])
    if "head" in cfg:
        cfg["head"] = tuple(cfg["head"])
    try:
        return qn.QAConfig(**cfg)
    except TypeError as exc:
        raise ValueError(f"QA config: {exc}") from None


def _sr_spec(args, seed):
    return dg.DegradationSpec(scale=args.scale, blur_sigma=args.blur, noise_level=args.noise, seed=seed)


# ----------------------------------------------------------------- commands

def cmd_gen_scenes(args):
    for i in range(args.count):
        scene = gen_scene(dg.derive_seed(args.seed, i), args.width, args.height, args.shapes, args.max_disparity)
        save_pair(os.path.join(args.out, f"scene{i:03d}"), scene)
    return {"scenes": args.count}


def cmd_degrade(args):
    config = _read_json(args.config) if args.config else dict(dg.DEFAULT_CATALOG)
    config["seed"] = args.seed
    catalog = dg.build_catalog(config)
    refs = _load_scenes(args.scenes)
    for i, ref in enumerate(refs):
        for j, version in enumerate(dg.make_versions(ref, catalog, i)):
            save_pair(_version_prefix(args.out, i, j), StereoPair(version.left, version.right))
    _write_json(os.path.join(args.out, "catalog.json"), {"config": catalog.config, "specs": catalog.describe()})
    return {"references": len(refs), "versions": len(catalog)}


def cmd_rankmos(args):
    refs = _load_scenes(args.scenes)
    versions = _load_versions(args.versions, len(refs))
    table, mos = rm.synthesize(refs, versions, per_reference=not args.global_norm)
    rm.write_vote_csv(os.path.join(args.out, "votes.csv"), table)
    rm.write_rankmos_csv(os.path.join(args.out, "rankmos.csv"), mos)
    return {"references": len(refs), "versions": len(versions[0])}


def _labelled(args, refs_wanted=None):
    labels = rm.read_rankmos_csv(args.labels)
    pairs, targets, keys = [], [], []
    for (i, j), z in sorted(labels.items()):
        if refs_wanted is not None and i not in refs_wanted:
            continue
        prefix = _version_prefix(args.versions, i, j)
        if not os.path.exists(prefix + "_L.ppm"):
            raise FileNotFoundError(f"label for ref {i} version {j} has no image {prefix}_L.ppm")
        pairs.append(load_pair(prefix))
        targets.append(z)
        keys.append((i, j))
    if not pairs:
        raise ValueError("no labelled pairs selected")
    return pairs, targets, keys


def cmd_train_qa(args):
    labels = rm.read_rankmos_csv(args.labels)
    all_refs = sorted({i for i, _ in labels})
    held = set(_int_list(args.holdout)) if args.holdout else set()
    train_refs = [i for i in all_refs if i not in held]
    pairs, targets, _ = _labelled(args, set(train_refs))
    model = qn.init_qa(_qa_config(args), seed=args.seed)
    dataset = qn.patch_dataset(pairs, targets, args.patch_size, args.stride)
    result = qn.qa_train(model, dataset, args.epochs, seed=args.seed, batch_size=args.batch_size, lr=args.lr)
    qn.save_qa(os.path.join(args.out, "qa.pssrw"), model)
    _csv_rows(os.path.join(args.out, "qa_loss.csv"), ["epoch", "loss"],
              [[e + 1, _fmt(v)] for e, v in enumerate(result.losses)])
    return {"train_references": train_refs, "held_out": sorted(held), "patches": len(dataset)}


def cmd_score(args):
    model = qn.load_qa(args.model)
    rows = []
    for prefix in _prefixes(args.input, "*"):
        pred = qn.qa_predict(model, load_pair(prefix), args.patch_size, args.stride)
        rows.append([os.path.basename(prefix), _fmt(pred.score), pred.n_patches])
    _csv_rows(os.path.join(args.out, "scores.csv"), ["image", "score", "n_patches"], rows)
    return {"images": len(rows)}


def _report_row(name, pred, label):
    r = rm.correlation_report(pred, label)
    return [name, len(pred), *(r[k] for k in ("SROCC", "PLCC", "KROCC", "RMSE"))]


def qa_report(keys, preds, labels):
    """Rows ``[subset, n, SROCC, PLCC, KROCC, RMSE]``: overall, then one per reference."""
    if not (len(keys) == len(preds) == len(labels)):
        raise ValueError("keys, predictions and labels differ in length")
    rows = [_report_row("overall", preds, labels)]
    for ref in sorted({i for i, _ in keys}):
        idx = [n for n, (i, _) in enumerate(keys) if i == ref]
        rows.append(_report_row(f"ref{ref:03d}", [preds[n] for n in idx], [labels[n] for n in idx]))
    return rows


def cmd_eval_qa(args):
    model = qn.load_qa(args.model)
    refs = set(_int_list(args.refs)) if args.refs else None
    pairs, targets, keys = _labelled(args, refs)
    preds = [qn.qa_predict(model, p, args.patch_size, args.stride).score for p in pairs]
    _csv_rows(os.path.join(args.out, "predictions.csv"), ["ref", "version", "rankMOS", "score"],
              [[i, j, _fmt(z), _fmt(s)] for (i, j), z, s in zip(keys, targets, preds)])
    rows = [[name, n, *map(_fmt, vals)] for name, n, *vals in qa_report(keys, preds, targets)]
    _csv_rows(os.path.join(args.out, "qa_report.csv"), ["subset", "n", "SROCC", "PLCC", "KROCC", "RMSE"], rows)
    for row in rows:
        print(" ".join(str(v) for v in row))
    return {"pairs": len(pairs)}


def cmd_train_sr(args):
    qa = qn.load_qa(args.qa)
    scenes = _load_scenes(args.scenes)
    model = pssr.init_sr(pssr.SRConfig(width=qa.config.feature_width, scale=args.scale), seed=args.seed)
    lambdas = (args.lambda0, args.lambda1, args.lambda2)
    result = pssr.train_sr(
        model, qa, scenes, _sr_spec(args, args.seed), args.epochs, seed=args.seed, lambdas=lambdas,
        batch_size=args.batch_size, lr=args.lr, patch_size=args.patch_size, objective=args.objective,
    )
    pssr.save_sr(os.path.join(args.out, "sr.pssrw"), model)
    pssr.write_curves_csv(os.path.join(args.out, "sr_curves.csv"), result.curves)
    return {"scenes": len(scenes), "lambdas": list(lambdas)}


def cmd_super_resolve(args):
    model = pssr.load_sr(args.model)
    prefixes = _prefixes(args.input, "*")
    for prefix in prefixes:
        sr = pssr.super_resolve(model, load_pair(prefix), args.scale)
        save_pair(os.path.join(args.out, os.path.basename(prefix)), sr)
    return {"images": len(prefixes)}


def cmd_eval_sr(args):
    qa = qn.load_qa(args.qa)
    scenes = _load_scenes(args.scenes)
    runners = {"bicubic": pssr.bicubic_runner(args.scale)}
    for item in args.model or []:
        name, sep, path = item.partition("=")
        if not sep:
            raise ValueError(f"--model expects NAME=PATH, got {item!r}")
        runners[name] = pssr.model_runner(pssr.load_sr(path))
    specs = [
        dg.DegradationSpec(scale=args.scale, blur_sigma=s, noise_level=args.noise, seed=args.seed)
        for s in _float_list(args.blur_sigmas)
    ]
    rows = pssr.eval_sr(runners, scenes, specs, qa)
    for line in pssr.write_eval(os.path.join(args.out, "eval_sr.csv"), os.path.join(args.out, "eval_sr.txt"), rows):
        print(line)
    return {"rows": len(rows)}


def cmd_gradcheck(args):
    from .checks import TOLERANCE, gradcheck_suite

    results = gradcheck_suite(args.seed)
    rows = []
    for name, res in results:
        ok = res.passed(TOLERANCE)
        print(f"{name} max_rel_err={res.max_rel_error:.3e} {'ok' if ok else 'FAIL'}")
        rows.append([name, _fmt(res.max_rel_error), res.checked, int(ok)])
    _csv_rows(os.path.join(args.out, "gradcheck.csv"), ["op", "max_rel_error", "coords", "passed"], rows)
    failed = [name for name, res in results if not res.passed(TOLERANCE)]
    if failed:
        raise ValueError(f"gradcheck above {TOLERANCE:g}: {','.join(failed)}")
    return {"ops": len(results)}


COMMANDS = {
    "gen-scenes": cmd_gen_scenes,
    "degrade": cmd_degrade,
    "rankmos": cmd_rankmos,
    "train-qa": cmd_train_qa,
    "score": cmd_score,
    "eval-qa": cmd_eval_qa,
    "train-sr": cmd_train_sr,
    "super-resolve": cmd_super_resolve,
    "eval-sr": cmd_eval_sr,
    "gradcheck": cmd_gradcheck,
}


# ------------------------------------------------------------------- parser

def build_parser():
    p = _Parser(prog="pssrlab", description="Stereo SR quality assessment and IQP-guided SR training.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help_text):
        c = sub.add_parser(name, help=help_text)
        c.add_argument("--seed", type=int, required=True)
        c.add_argument("--out", required=True, help="output directory (created if missing)")
        return c

    c = command("gen-scenes", "synthesize stereo scenes with ground-truth disparity")
    c.add_argument("--count", type=int, default=8)
    c.add_argument("--width", type=int, default=120)
    c.add_argument("--height", type=int, default=120)
    c.add_argument("--shapes", type=int, default=3)
    c.add_argument("--max-disparity", type=int, default=8)

    c = command("degrade", "build the distortion catalog for every scene")
    c.add_argument("--scenes", required=True)
    c.add_argument("--config", help="catalog JSON (scales, blur_sigmas, noise_levels, upsamplers)")

    c = command("rankmos", "vote, order and merge synthetic quality labels")
    c.add_argument("--scenes", required=True)
    c.add_argument("--versions", required=True)
    c.add_argument("--global-norm", action="store_true", help="normalize over the whole table, not per reference")

    def qa_data(c):
        c.add_argument("--versions", required=True)
        c.add_argument("--labels", required=True, help="rankmos.csv")

    def patching(c, default):
        c.add_argument("--patch-size", type=int, default=default)
        c.add_argument("--stride", type=int, default=None)

    c = command("train-qa", "train the three-branch quality network")
    qa_data(c)
    patching(c, 120)
    c.add_argument("--config", help="QA network JSON")
    c.add_argument("--holdout", default="", help="comma-separated reference indices to exclude")
    c.add_argument("--epochs", type=int, default=30)
    c.add_argument("--batch-size", type=int, default=8)
    c.add_argument("--lr", type=float, default=1e-4)

    c = command("score", "patch-averaged quality scores for every pair in a directory")
    c.add_argument("--model", required=True)
    c.add_argument("--input", required=True)
    patching(c, None)

    c = command("eval-qa", "correlation of predictions with rankMOS labels")
    c.add_argument("--model", required=True)
    qa_data(c)
    c.add_argument("--refs", default="", help="comma-separated reference indices (default: all)")
    patching(c, None)

    def degradation_flags(c):
        c.add_argument("--scale", type=int, default=4, choices=(2, 3, 4))
        c.add_argument("--noise", type=float, default=0.0)

    c = command("train-sr", "train the stereo SR network with the IQP objective")
    c.add_argument("--scenes", required=True)
    c.add_argument("--qa", required=True)
    degradation_flags(c)
    c.add_argument("--blur", type=float, default=0.0)
    c.add_argument("--lambda0", type=float, default=pssr.LAMBDAS[0])
    c.add_argument("--lambda1", type=float, default=pssr.LAMBDAS[1])
    c.add_argument("--lambda2", type=float, default=pssr.LAMBDAS[2])
    c.add_argument("--objective", choices=("combined", "mse"), default="combined")
    c.add_argument("--epochs", type=int, default=50)
    c.add_argument("--batch-size", type=int, default=4)
    c.add_argument("--lr", type=float, default=1e-4)
    c.add_argument("--patch-size", type=int, default=120)

    c = command("super-resolve", "super-resolve every low-resolution pair in a directory")
    c.add_argument("--model", required=True)
    c.add_argument("--input", required=True)
    c.add_argument("--scale", type=int, default=None, choices=(2, 3, 4))

    c = command("eval-sr", "PSNR/SSIM/QA/EPE of SR models against bicubic")
    c.add_argument("--scenes", required=True)
    c.add_argument("--qa", required=True)
    c.add_argument("--model", action="append", help="NAME=PATH, repeatable")
    degradation_flags(c)
    c.add_argument("--blur-sigmas", default="0", help="comma-separated blur sigmas to sweep")

    command("gradcheck", "finite-difference check of every op and both full graphs")

    r = sub.add_parser("replay", help="rerun a recorded manifest")
    r.add_argument("manifest")
    r.add_argument("--out", default=None, help="override the recorded output directory")
    return p


def _absolute(value):
    if isinstance(value, list):
        # NAME=PATH entries
        out = []
        for item in value:
            name, sep, path = item.partition("=")
            out.append(f"{name}={os.path.abspath(path)}" if sep else item)
        return out
    return os.path.abspath(value)


def _resolve_paths(args):
    # manifests record absolute paths so a replay works from any directory
    for name in PATH_ARGS + ("out",):
        value = getattr(args, name, None)
        if value:
            setattr(args, name, _absolute(value))


def _manifest_argv(manifest):
    argv = [manifest["command"]]
    for key, value in sorted(manifest["args"].items()):
        flag = "--" + key.replace("_", "-")
        if value is None or value is False:
            continue
        if value is True:
            argv.append(flag)
        elif isinstance(value, list):
            for v in value:
                argv += [flag, str(v)]
        else:
            argv += [flag, str(value)]
    return argv


def _execute(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "replay":
        manifest = _read_json(args.manifest)
        if manifest.get("command") not in COMMANDS:
            raise ValueError(f"manifest names unknown command {manifest.get('command')!r}")
        replay = _manifest_argv(manifest)
        if args.out:
            replay += ["--out", args.out]
        return _execute(replay)
    _resolve_paths(args)
    os.makedirs(args.out, exist_ok=True)
    recorded = {k: v for k, v in sorted(vars(args).items()) if k != "command"}
    summary = COMMANDS[args.command](args)
    _write_json(
        os.path.join(args.out, "manifest.json"),
        {"command": args.command, "args": recorded, "version": __version__, "summary": summary},
    )
    return 0


def run(argv=None):
    """Run one command; returns the process exit code."""
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        return _execute(argv)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, TypeError, json.JSONDecodeError, FloatingPointError, pssr.DivergenceError) as exc:
        print(f"error: {type(exc).__name__}: {exc}".replace("\n", " "), file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
