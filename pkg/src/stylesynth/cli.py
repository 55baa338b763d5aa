"""Command-line entry point.

Stages read and write fixed file names under ``<output_dir>/<stage>/``::

    semantics/   categories.json  css.json  clusters.csv
    etf/         etf.arr  etf_report.json
    styles/      styles.arr  history.csv  summary.json  loss.png
    classifier/  head.arr  history.csv  loss.png
    evaluation/  metrics.json  metrics.csv
    reports/     diversity.csv  sd_vs_n.png  lambda_sweep.csv  lambda_sweep.png  timing.csv  timing.png

Each stage directory also gets the ``run_config.json`` that produced it.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path


from . import arrays, plotting, reports
from .cache import FeatureCache
from .classifier import LinearHead, synth_training_set, train_linear
from .config import RunConfig
from .encoders import make_encoder
from .errors import ConfigError, MissingInputError, StyleSynthError
from .etf import EtfTemplate, build_etf, verify_etf
from .metrics import (DatasetManifest, MetricsReport, evaluate, metric_sc, mock_manifest,
                      style_diversity)
from .semantics import CategorySet, CoarseSemanticSet, build_css
from .style_trainer import MODES, etf_accuracy, train_styles

log = logging.getLogger("stylesynth")

STAGES = ("extract-semantics", "build-etf", "train-styles", "train-classifier", "evaluate",
          "diversity-report", "compare-baselines", "timing-bench")


def write_csv(path, rows: list[dict], columns=None) -> Path:
    path = Path(path)
    columns = columns or (list(rows[0]) if rows else [])
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k)) for k in columns})
    return path


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value


def write_json(path, data) -> Path:
    path = Path(path)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


class Context:
    def __init__(self, config: RunConfig):
        self.config = config
        self.root = Path(config.output_dir)
        self._encoder = None

    def stage_dir(self, name: str) -> Path:
        path = self.root / name
        self.config.write(path)
        return path

    def need(self, path: Path, stage: str) -> Path:
        if not path.exists():
            raise MissingInputError(f"missing input from an earlier stage: {path.name}",
                                    stage=stage, path=str(path))
        return path

    @property
    def encoder(self):
        if self._encoder is None:
            try:
                self._encoder = make_encoder(self.config.backend, self.config.model_name)
            except ValueError as exc:
                raise ConfigError(str(exc), stage="backend") from exc
            if self.config.feature_cache:
                self._encoder.feature_cache = FeatureCache(self.config.feature_cache)
        return self._encoder

    def categories(self) -> CategorySet:
        saved = self.root / "semantics" / "categories.json"
        if saved.exists():
            return CategorySet.from_file(saved)
        return self.config.categories.load(self.config.seed)


def cmd_extract_semantics(ctx: Context) -> dict:
    out = ctx.stage_dir("semantics")
    cats = ctx.config.categories.load(ctx.config.seed)
    result = build_css(cats, ctx.encoder, ctx.config.csg)
    write_json(out / "categories.json", {"names": cats.names})
    result.save(out / "css.json")
    rows = [{"cluster_id": e.cluster_id, "members": "|".join(e.members), "terms": "|".join(e.terms)}
            for e in result.entries]
    write_csv(out / "clusters.csv", rows, ["cluster_id", "members", "terms"])
    return {"k": result.k, "css": result.css, "queries": result.queries, "splits": result.splits}


def cmd_build_etf(ctx: Context) -> dict:
    out = ctx.stage_dir("etf")
    style = ctx.config.style
    template = build_etf(style.k, ctx.encoder.joint_dim, style.template_seed)
    report = verify_etf(template)
    arrays.save(out / "etf.arr", template.columns, {"k": template.k, "p": template.p,
                                                    "seed": template.seed})
    summary = {"k": template.k, "p": template.p, "passed": report.passed,
               "max_norm_deviation": report.max_norm_deviation,
               "max_cosine_deviation": report.max_cosine_deviation,
               "column_sum_norm": report.column_sum_norm}
    write_json(out / "etf_report.json", summary)
    return summary


def _load_template(ctx: Context):
    path = ctx.root / "etf" / "etf.arr"
    if not path.exists():
        return None
    cols, meta = arrays.load(path)
    if cols.shape != (ctx.encoder.joint_dim, ctx.config.style.k):
        raise ConfigError("saved ETF does not match style.k / backend.joint_dim",
                          stage="train-styles", path=str(path))
    return EtfTemplate(cols, meta.get("seed", 0))


def cmd_train_styles(ctx: Context) -> dict:
    cfg = ctx.config
    if cfg.mode not in MODES:
        raise ConfigError(f"unknown mode {cfg.mode!r}; expected one of {MODES}", stage="train-styles")
    cats = ctx.categories()
    css = None
    if cfg.mode == "batstyler" and cfg.style.consistency == "coarse":
        css_path = ctx.need(ctx.root / "semantics" / "css.json", "train-styles")
        css = CoarseSemanticSet.load(css_path).css
    template = _load_template(ctx) if cfg.mode == "batstyler" and cfg.style.diversity == "etf" else None
    out = ctx.stage_dir("styles")
    result = train_styles(cfg.mode, ctx.encoder, cfg.style, css=css, categories=cats.names,
                          baseline=cfg.baseline, template=template)
    theta = result.styles.theta
    arrays.save(out / "styles.arr", theta, {"mode": cfg.mode, "seed": cfg.style.seed,
                                            "config": cfg.fingerprint()})
    history = result.history
    if cfg.mode == "batstyler" and cfg.style.diversity != "orth":
        history = [{("loss_ce" if k == "loss_div" else k): v for k, v in row.items()} for row in history]
    if history:
        write_csv(out / "history.csv", history)
        x_key = "epoch" if "epoch" in history[0] else "style"
        plotting.loss_curves(history, out / "loss.png", f"stage 1 ({cfg.mode})", x_key)
    summary = {"mode": cfg.mode, "steps": result.steps,
               "sd": style_diversity(theta, ctx.encoder),
               "sc": metric_sc(theta, cats.names, ctx.encoder)}
    if result.template is not None:
        summary["etf_train_accuracy"] = etf_accuracy(theta, result.template, ctx.encoder)
    write_json(out / "summary.json", summary)
    summary["wall_clock"] = result.wall_clock
    return summary


def cmd_train_classifier(ctx: Context) -> dict:
    cats = ctx.categories()
    theta, _ = arrays.load(ctx.need(ctx.root / "styles" / "styles.arr", "train-classifier"))
    out = ctx.stage_dir("classifier")
    feats, labels = synth_training_set(theta, cats.names, ctx.encoder)
    head, history = train_linear(ctx.config.classifier, feats, labels, cats.names)
    arrays.save(out / "head.arr", head.weight, {"class_names": head.class_names})
    write_csv(out / "history.csv", history)
    plotting.loss_curves(history, out / "loss.png", "stage 2 (ArcFace)")
    return {"final_loss": history[-1]["loss"], "train_accuracy": history[-1]["train_accuracy"]}


def cmd_evaluate(ctx: Context) -> dict:
    weight, meta = arrays.load(ctx.need(ctx.root / "classifier" / "head.arr", "evaluate"))
    head = LinearHead(weight, meta["class_names"])
    ev = ctx.config.evaluation
    if ev.manifest:
        manifest = DatasetManifest.load(ev.manifest)
    else:
        manifest = mock_manifest(head.class_names, ev.domains, ev.per_class, ctx.config.seed)
    out = ctx.stage_dir("evaluation")
    acc = evaluate(manifest, head, ctx.encoder)
    report = MetricsReport(per_domain=acc["per_domain"], macro_accuracy=acc["macro_accuracy"],
                           config_fingerprint=ctx.config.fingerprint())
    styles = ctx.root / "styles" / "styles.arr"
    if styles.exists():
        theta, _ = arrays.load(styles)
        report.sd = style_diversity(theta, ctx.encoder)
        report.sc = metric_sc(theta, head.class_names, ctx.encoder)
    (out / "metrics.json").write_text(report.to_json() + "\n")
    rows = [{"domain": d, "accuracy": a, "count": acc["counts"][d]} for d, a in acc["per_domain"].items()]
    rows.append({"domain": "macro", "accuracy": acc["macro_accuracy"], "count": sum(acc["counts"].values())})
    write_csv(out / "metrics.csv", rows, ["domain", "accuracy", "count"])
    return json.loads(report.to_json())


def cmd_diversity_report(ctx: Context) -> dict:
    cfg = ctx.config
    out = ctx.stage_dir("reports")
    modes = ("batstyler", "baseline-sequential", "baseline-parallel")
    runs = reports.diversity_sweep(cfg.sweep.n_values, cfg.sweep.seeds, modes, cfg.style,
                                   cfg.backend, cfg.csg, cfg.baseline.lam,
                                   cfg.categories.synthetic_groups)
    write_csv(out / "diversity_runs.csv", [vars(r) for r in runs],
              ["mode", "n", "seed", "lam", "sd", "sc", "css_size"])
    summary = reports.summarize(runs, "n")
    rows = list(summary.values())
    write_csv(out / "diversity.csv", rows, ["mode", "n", "runs", "sd_mean", "sd_std", "sc_mean", "sc_std"])
    curves = {}
    for row in rows:
        curves.setdefault(row["mode"], []).append((row["n"], row["sd_mean"], row["sd_std"]))
    plotting.sd_vs_n(curves, out / "sd_vs_n.png")
    return {"rows": rows}


def cmd_compare_baselines(ctx: Context) -> dict:
    cfg = ctx.config
    out = ctx.stage_dir("reports")
    n = cfg.categories.synthetic_n
    runs = reports.lambda_sweep(cfg.sweep.lams, cfg.sweep.seeds, cfg.mode if cfg.mode != "batstyler"
                                else "baseline-sequential", n, cfg.style, cfg.backend, cfg.csg,
                                cfg.categories.synthetic_groups)
    rows = list(reports.summarize(runs, "lam").values())
    write_csv(out / "lambda_sweep.csv", rows, ["mode", "lam", "runs", "sd_mean", "sd_std", "sc_mean", "sc_std"])
    plotting.lambda_sweep(rows, out / "lambda_sweep.png")
    return {"rows": rows}


def cmd_timing_bench(ctx: Context) -> dict:
    cfg = ctx.config
    out = ctx.stage_dir("reports")
    table = reports.timing_bench(cfg.style, cfg.categories.synthetic_n, cfg.sweep.repeats,
                                 cfg.backend, cfg.csg, cfg.baseline.lam,
                                 n_groups=cfg.categories.synthetic_groups)
    rows = [{"mode": m, "median_s": t["median"], "stdev_s": t["stdev"], "steps": t["steps"],
             "runs_s": " ".join(f"{x:.4f}" for x in t["runs"])} for m, t in table.items()]
    write_csv(out / "timing.csv", rows, ["mode", "median_s", "stdev_s", "steps", "runs_s"])
    plotting.timing_bars(table, out / "timing.png")
    ratio = table["baseline-sequential"]["median"] / table["batstyler"]["median"]
    return {"table": table, "speedup": ratio}


COMMANDS = {
    "extract-semantics": cmd_extract_semantics,
    "build-etf": cmd_build_etf,
    "train-styles": cmd_train_styles,
    "train-classifier": cmd_train_classifier,
    "evaluate": cmd_evaluate,
    "diversity-report": cmd_diversity_report,
    "compare-baselines": cmd_compare_baselines,
    "timing-bench": cmd_timing_bench,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stylesynth", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*STAGES, "show-config"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--out", help="output directory (same as --output_dir=...)")
        p.add_argument("--mode", choices=MODES, help="stage-1 loss/schedule")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    stage = args.command
    try:
        bad = [x for x in extra if not x.startswith("--") or "=" not in x]
        if bad:
            raise ConfigError(f"unrecognised arguments: {bad}", stage="cli")
        overrides = list(extra)
        if args.out:
            overrides.append(f"output_dir={json.dumps(args.out)}")
        if args.mode:
            overrides.append(f"mode={json.dumps(args.mode)}")
        config = RunConfig.load(args.config, overrides).validate()
        if stage == "show-config":
            print(config.to_json())
            return 0
        result = COMMANDS[stage](Context(config))
        print(json.dumps(result, indent=2, sort_keys=True, default=str))
        return 0
    except StyleSynthError as exc:
        prefix = "" if exc.stage else f"[{stage}] "
        print(f"error: {prefix}{exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
