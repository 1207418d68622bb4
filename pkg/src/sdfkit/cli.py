"""Command line: decompose, features, evaluate, synth, report."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config_file, merge
from .errors import ConfigError, LoadError, SdfError
from .evaluation import (FeatureCube, level_sweep, nested_loocv, permutation_test,
                         repeated_kfold)
from .features import (FeatureSettings, SdfVector, VmsDecomposition, decompose_signal,
                       features_from, features_to_csv, read_features_csv, standardized_bundle)
from .signals import load_subject, read_manifest
from .svgplot import bar_chart, histogram, line_chart
from .synth import SynthSpec, write_dataset

log = logging.getLogger("sdfkit")

ARCHIVE = "vms_archive.jsonl"
FEATURES = "features.csv"
REPORT = "cv_report.json"


# ------------------------------------------------------------------ outputs

def header_lines(cfg: RunConfig, kind: str) -> list:
    return [f"sdfkit {__version__}", f"config_hash {cfg.config_hash()}",
            f"feature_hash {cfg.feature_hash()}", f"content {kind}"]


def header_dict(cfg: RunConfig, kind: str) -> dict:
    return {"tool": "sdfkit", "version": __version__, "config_hash": cfg.config_hash(),
            "feature_hash": cfg.feature_hash(), "content": kind}


class OutputSet:
    """Writes files atomically; on failure every file written in the block is removed."""

    def __init__(self, directory: Path):
        self.dir = Path(directory)
        self.written: list = []

    def __enter__(self):
        self.dir.mkdir(parents=True, exist_ok=True)
        return self

    def write(self, name: str, text: str) -> Path:
        path = self.dir / name
        tmp = path.with_name(path.name + ".part")
        try:
            tmp.write_text(text, encoding="utf-8")
            os.replace(tmp, path)
        finally:
            if tmp.exists():
                tmp.unlink()
        self.written.append(path)
        return path

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            for p in self.written:
                p.unlink(missing_ok=True)
        return False


def _csv_text(header: list, rows, comments=()) -> str:
    buf = io.StringIO()
    for line in comments:
        buf.write(f"# {line}\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    wr.writerows(rows)
    return buf.getvalue()


def _read_header(path: Path) -> dict:
    """``key value`` pairs from the leading comment block of a CSV output."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            parts = line[1:].strip().split(" ", 1)
            if len(parts) == 2:
                out[parts[0]] = parts[1]
    return out


# ------------------------------------------------------------ featurization

def _subject_task(entry, manifest, settings: FeatureSettings, want_records: bool):
    erps = load_subject(entry, manifest, band=settings.band)
    missing = [c for c in settings.channels if c not in erps.channel_names]
    if missing:
        raise ConfigError(f"channels {missing} not in dataset; available: "
                          f"{', '.join(erps.channel_names)}")
    settings.intervals.validate(erps.L, erps.fs)
    vectors, records = [], []
    feature_levels = set(settings.feature_levels().tolist())
    for ch in settings.channels:
        y = erps.erp(settings.stimulus, ch)
        for m in settings.m_grid:
            bundle = standardized_bundle(float(settings.band[0]), float(settings.band[1]), int(m),
                                         float(erps.fs), int(erps.L), float(settings.w),
                                         settings.scheme)
            _, decs = decompose_signal(y, bundle, settings, all_levels=want_records)
            for level, sl, dec in decs:
                if level in feature_levels:
                    f1, f2, deg = features_from(dec, settings, sl.degenerate)
                    vectors.append(SdfVector(erps.subject, erps.group, ch, settings.stimulus,
                                             int(m), level, f1, f2, deg))
                if want_records:
                    records.append(_archive_record(erps, ch, settings.stimulus, int(m), level,
                                                   sl, dec, bundle))
    return vectors, records


def _archive_record(erps, channel, stimulus, m, level, sl, dec, bundle) -> dict:
    beta = sl.beta_debiased
    nz = np.flatnonzero(beta)
    n1 = bundle.n_initial
    x0 = [[int(j), int(bundle.mode[j]), int(bundle.component[j]), float(beta[j])]
          for j in nz if j < n1]
    U = [[int(j), int(bundle.mode[j]), int(bundle.time_index[j]), float(beta[j])]
         for j in nz if j >= n1]
    return {"subject": erps.subject, "group": erps.group, "channel": channel,
            "stimulus": stimulus, "m": m, "level": level, "alpha": sl.alpha_user,
            "degenerate": bool(sl.degenerate), "intercept": dec.intercept,
            "residual_norm": sl.residual_norm, "x0": x0, "U": U,
            "yhat_x0": [float(v) for v in dec.yhat_x0], "yhat_U": [float(v) for v in dec.yhat_U]}


def _run_subjects(cfg: RunConfig, want_records: bool):
    if not cfg.manifest:
        raise ConfigError("a dataset manifest is required (--manifest)")
    manifest = read_manifest(cfg.manifest)
    settings = cfg.feature_settings()
    entries = list(manifest.subjects)
    log.info("processing %d subjects x %d channels", len(entries), len(settings.channels))
    if cfg.workers > 1:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=cfg.workers)(
            delayed(_subject_task)(e, manifest, settings, want_records) for e in entries)
    else:
        results = [_subject_task(e, manifest, settings, want_records) for e in entries]
    vectors = [v for r in results for v in r[0]]
    records = [rec for r in results for rec in r[1]]
    return manifest, vectors, records


def cmd_decompose(cfg: RunConfig) -> Path:
    manifest, _, records = _run_subjects(cfg, want_records=True)
    head = header_dict(cfg, "vms-archive")
    head.update({"stimulus": cfg.stimulus, "fs": manifest.fs, "L": manifest.L})
    lines = [json.dumps({"header": head}, sort_keys=True)]
    lines += [json.dumps(r, sort_keys=True) for r in records]
    with OutputSet(cfg.out) as out:
        return out.write(ARCHIVE, "\n".join(lines) + "\n")


def features_from_archive(path: Path, cfg: RunConfig) -> list | None:
    """Recompute features from a matching archive; None when it does not match the config."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        try:
            head = json.loads(first)["header"]
        except (json.JSONDecodeError, KeyError, TypeError):
            raise LoadError("archive has no header record", path, 1) from None
        if head.get("feature_hash") != cfg.feature_hash() or head.get("stimulus") != cfg.stimulus:
            return None
        fs, L = float(head["fs"]), int(head["L"])
        settings = cfg.feature_settings()
        feature_levels = set(settings.feature_levels().tolist())
        out = []
        for lineno, line in enumerate(fh, start=2):
            try:
                r = json.loads(line)
                if float(r["level"]) not in feature_levels:
                    continue
                U = np.zeros((int(r["m"]), L - 1))
                for _, mode, k, v in r["U"]:
                    U[mode, k] = v
                dec = VmsDecomposition(x0=np.zeros(2 * int(r["m"])), U=U,
                                       yhat_x0=np.asarray(r["yhat_x0"]),
                                       yhat_U=np.asarray(r["yhat_U"]),
                                       intercept=float(r["intercept"]), fs=fs)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, IndexError) as exc:
                raise LoadError(f"malformed archive record: {exc}", path, lineno) from None
            f1, f2, deg = features_from(dec, settings, bool(r["degenerate"]))
            out.append(SdfVector(r["subject"], r["group"], r["channel"], r["stimulus"],
                                 int(r["m"]), float(r["level"]), f1, f2, deg))
    return out


def compute_features(cfg: RunConfig) -> list:
    archive = cfg.out / ARCHIVE
    if archive.exists():
        vectors = features_from_archive(archive, cfg)
        if vectors is not None:
            log.info("features recomputed from %s", archive)
            return vectors
    _, vectors, _ = _run_subjects(cfg, want_records=False)
    return vectors


def cmd_features(cfg: RunConfig) -> Path:
    vectors = compute_features(cfg)
    with OutputSet(cfg.out) as out:
        return out.write(FEATURES, features_to_csv(vectors, header_lines(cfg, "features")))


def load_or_compute_features(cfg: RunConfig) -> list:
    if cfg.features:
        path = Path(cfg.features)
        if not path.exists():
            raise LoadError("feature file not found", path)
        head = _read_header(path)
        if head.get("feature_hash") not in (None, cfg.feature_hash()):
            raise ConfigError(f"{path} was computed with a different feature configuration "
                              f"(hash {head.get('feature_hash')}, expected {cfg.feature_hash()})")
        return read_features_csv(path)
    cached = cfg.out / FEATURES
    if cached.exists() and _read_header(cached).get("feature_hash") == cfg.feature_hash():
        vectors = read_features_csv(cached)
        if vectors and vectors[0].stimulus == cfg.stimulus:
            return vectors
    cmd_features(cfg)
    return read_features_csv(cached)


# -------------------------------------------------------------- evaluation

def cmd_evaluate(cfg: RunConfig):
    vectors = load_or_compute_features(cfg)
    cube = FeatureCube.from_vectors(vectors, stimulus=cfg.stimulus)
    cube = cube.channel_subset(cfg.channels)
    want_m = set(int(m) for m in cfg.m_grid)
    if set(cube.m_values) != want_m:
        raise ConfigError(f"features hold m={sorted(cube.m_values)}, configuration asks "
                          f"for m={sorted(want_m)}")
    mode = cfg.cv_mode()
    report = nested_loocv(cube, voting=cfg.voting)
    report.level_sweep = level_sweep(cube)
    if mode[0] == "kfold":
        report.mode = cfg.cv
        report.kfold = repeated_kfold(cube, K=mode[1], repeats=mode[2], seed=cfg.seed,
                                      voting=cfg.voting, workers=cfg.workers)
    elif mode[0] == "permtest":
        report.mode = cfg.cv
        report.permutation = permutation_test(cube, n=mode[1], seed=cfg.seed,
                                              voting=cfg.voting, workers=cfg.workers)
    doc = report.to_dict()
    doc["header"] = header_dict(cfg, "cv-report")
    with OutputSet(cfg.out) as out:
        out.write(REPORT, json.dumps(doc, indent=1, sort_keys=True) + "\n")
        emit_figures(doc, out, header_lines(cfg, "figure data"))
    return report


def emit_figures(doc: dict, out: OutputSet, comments) -> None:
    """CSV tables and SVG charts derived from a serialized report."""
    comments = list(comments)
    metrics = doc["metrics"]
    cells = [(c["m"], c["level"]) for c in doc["cells"]]
    channels = doc["channels"]
    # the report JSON sorts keys, so order rows by channel explicitly
    keys = [k for k in channels if k in metrics] + [k for k in ("vote",) if k in metrics]
    out.write("metrics.csv", _csv_text(
        ["key", "tp", "fn", "fp", "tn", "accuracy", "sensitivity", "specificity"],
        [[k, v["tp"], v["fn"], v["fp"], v["tn"], repr(v["accuracy"]), repr(v["sensitivity"]),
          repr(v["specificity"])] for k, v in ((k, metrics[k]) for k in keys)], comments))

    for name, curves, title in (
            ("validation_curves", doc["validation_curves"], "Mean inner validation accuracy"),
            ("level_sweep", doc.get("level_sweep"), "LOOCV accuracy at fixed sparsity level")):
        if not curves:
            continue
        out.write(f"{name}.csv", _csv_text(
            ["m", "level_percent"] + channels,
            [[m, lv] + [repr(curves[ch][i]) for ch in channels] for i, (m, lv) in enumerate(cells)],
            comments))
        m0 = cells[0][0]
        idx = [i for i, (m, _) in enumerate(cells) if m == m0]
        series = {ch: [curves[ch][i] for i in idx] for ch in channels}
        out.write(f"{name}.svg", line_chart([cells[i][1] for i in idx], series,
                                            title=f"{title} (m={m0})", xlabel="sparsity level (%)",
                                            ylabel="accuracy", ylim=(0.0, 1.0), header=comments))

    acc = [metrics[ch]["accuracy"] for ch in channels]
    out.write("channel_map.csv", _csv_text(["channel", "accuracy"],
                                           [[ch, repr(a)] for ch, a in zip(channels, acc)],
                                           comments))
    out.write("channel_map.svg", bar_chart(channels, acc, title="Nested LOOCV accuracy per channel",
                                           xlabel="channel", ylabel="accuracy", header=comments))

    kf = doc.get("kfold")
    if kf:
        keys = [k for k in channels + ["vote"] if k in kf["accuracies"]]
        n = len(kf["accuracies"][keys[0]])
        out.write("kfold_accuracies.csv", _csv_text(
            ["repetition"] + keys,
            [[r] + [repr(kf["accuracies"][k][r]) for k in keys] for r in range(n)], comments))
        out.write("kfold_summary.csv", _csv_text(
            ["key", "set", "mean", "std", "p5"],
            [[k, s, repr(v["mean"]), repr(v["std"]), repr(v["p5"])]
             for s in ("test", "train", "validation")
             for k, v in ((k, kf[s][k]) for k in keys if k in kf[s])], comments))
        key = "vote" if "vote" in keys else keys[0]
        t = kf["test"][key]
        out.write("kfold_hist.svg", histogram(
            kf["accuracies"][key], bins=20,
            title=f"{kf['K']}-fold test accuracy over {n} repetitions ({key})",
            xlabel="accuracy", marks={"mean": t["mean"], "5th pct": t["p5"]}, header=comments))

    perm = doc.get("permutation")
    if perm:
        out.write("permutation_null.csv", _csv_text(
            ["draw", "statistic"], [[i, repr(v)] for i, v in enumerate(perm["null"])],
            comments + [f"observed {perm['observed']!r}", f"p_empirical {perm['p_empirical']!r}",
                        f"p_gaussian {perm['p_gaussian']!r}"]))
        out.write("permutation_hist.svg", histogram(
            perm["null"], bins=20, title=f"Permutation null ({perm['n']} draws)",
            xlabel="best nested-LOOCV accuracy", marks={"observed": perm["observed"]},
            header=comments))


def cmd_report(cfg: RunConfig) -> list:
    path = cfg.out / REPORT
    if not path.exists():
        raise LoadError("no report found; run evaluate first", path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise LoadError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
    head = doc.get("header", {})
    comments = [f"sdfkit {head.get('version', __version__)}",
                f"config_hash {head.get('config_hash', '')}",
                f"feature_hash {head.get('feature_hash', '')}", "content figure data"]
    with OutputSet(cfg.out) as out:
        emit_figures(doc, out, comments)
        return list(out.written)


def cmd_synth(cfg: RunConfig) -> Path:
    spec = SynthSpec(n_subjects=cfg.n_subjects, seed=cfg.seed, latency_shift=cfg.latency_shift,
                     amplitude_factor=cfg.amplitude_factor, snr_db=cfg.snr_db,
                     channels=tuple(cfg.channels),
                     channel_gain=_default_gains(len(cfg.channels)), band=tuple(cfg.band))
    out_dir = cfg.out
    try:
        return write_dataset(spec, out_dir, header_lines(cfg, "synthetic ERP"))
    except BaseException:
        for p in out_dir.glob("sub-*.csv"):
            p.unlink(missing_ok=True)
        (out_dir / "manifest.json").unlink(missing_ok=True)
        raise


def _default_gains(n: int) -> tuple:
    if n == 1:
        return (1.0,)
    mid = (n - 1) / 2
    return tuple(1.0 - 0.2 * abs(i - mid) / max(mid, 1) for i in range(n))


# ----------------------------------------------------------------- parsing

def _flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file; explicit flags take precedence")
    p.add_argument("--manifest", help="dataset manifest (JSON)")
    p.add_argument("--stimulus", choices=("standard", "target", "novel"))
    p.add_argument("--channels", help="comma-separated channel names")
    p.add_argument("--m-grid", dest="m_grid", help="comma-separated oscillator counts")
    p.add_argument("--band", help="f_low,f_high in Hz")
    p.add_argument("--w", type=float, help="initial-state weight in [0, 1]")
    p.add_argument("--alpha-f", dest="alpha_f", type=float, help="final penalty")
    p.add_argument("--level-step", dest="level_step", type=float, help="sparsity step in percent")
    p.add_argument("--i1", help="F1 interval start,end in s")
    p.add_argument("--i2", help="F2 interval start,end in s")
    p.add_argument("--cv", help="nested-loocv | kfold:KxR | permtest:N")
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output-dir", dest="output_dir",
                   help="output directory (default $SDFKIT_OUTPUT_DIR or ./sdf-out)")
    p.add_argument("--workers", type=int)
    p.add_argument("--convention", choices=("normalized-by-L", "paper-eq7"))
    p.add_argument("--scheme", choices=("exact", "euler"))
    p.add_argument("--snap", action=argparse.BooleanOptionalAction, default=None,
                   help="snap sparsity levels to path knots instead of interpolating")
    p.add_argument("--f1-absolute", dest="f1_absolute", action=argparse.BooleanOptionalAction,
                   default=None)
    p.add_argument("--f2-nonzero-only", dest="f2_nonzero_only",
                   action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--voting", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--features", help="existing feature CSV for evaluate")
    p.add_argument("--n-subjects", dest="n_subjects", type=int)
    p.add_argument("--latency-shift", dest="latency_shift", type=float)
    p.add_argument("--amplitude-factor", dest="amplitude_factor", type=float)
    p.add_argument("--snr-db", dest="snr_db", type=float)
    p.add_argument("-v", "--verbose", action="count", default=0)


COMMANDS = {"decompose": cmd_decompose, "features": cmd_features, "evaluate": cmd_evaluate,
            "synth": cmd_synth, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdfkit", description=__doc__)
    parser.add_argument("--version", action="version", version=f"sdfkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {"decompose": "write the sparse decomposition archive",
             "features": "write the F1/F2 feature table",
             "evaluate": "run cross-validation and write the report and figures",
             "synth": "generate a synthetic two-group ERP dataset",
             "report": "regenerate figures from an existing report"}
    for name in COMMANDS:
        _flags(sub.add_parser(name, help=helps[name]))
    return parser


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    skip = {"command", "config", "verbose"}
    flags = {k: v for k, v in vars(ns).items() if k not in skip}
    file_values = load_config_file(ns.config) if ns.config else None
    return merge(file_values, flags)


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(ns.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(ns)
        result = COMMANDS[ns.command](cfg)
    except SdfError as exc:
        print(f"sdfkit: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"sdfkit: error: {exc}", file=sys.stderr)
        return LoadError.exit_code
    if ns.command == "evaluate":
        for key, m in result.metrics.items():
            print(f"{key}: accuracy {m.accuracy:.3f} sensitivity {m.sensitivity:.3f} "
                  f"specificity {m.specificity:.3f}")
    elif isinstance(result, Path):
        print(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
