"""Multi-run experiments behind the report subcommands: diversity vs. N,
the baseline lambda sweep, and stage-1 timing."""
from __future__ import annotations

import dataclasses
import logging

import numpy as np

from .encoders import EncoderSpec, MockEncoder
from .metrics import metric_sc, style_diversity, timing_compare
from .semantics import CsgConfig, build_css, synthetic_categories
from .style_trainer import BaselineLossConfig, StyleTrainConfig, train_styles

log = logging.getLogger(__name__)


@dataclasses.dataclass
class SweepRun:
    mode: str
    n: int
    seed: int
    lam: float
    sd: float
    sc: float
    wall_clock: float
    css_size: int


def _setting(n, seed, spec, csg, n_groups):
    encoder = MockEncoder(dataclasses.replace(spec, seed=seed))
    names, _ = synthetic_categories(n, n_groups, seed)
    css = build_css(names, encoder, dataclasses.replace(csg, seed=seed)).css
    return encoder, names, css


def run_mode(mode, encoder, names, css, style: StyleTrainConfig, lam: float, seed: int):
    config = dataclasses.replace(style, seed=seed)
    result = train_styles(mode, encoder, config, css=css, categories=names,
                          baseline=BaselineLossConfig(lam))
    theta = result.styles.theta
    return result, style_diversity(theta, encoder), metric_sc(theta, names, encoder)


def diversity_sweep(n_values, seeds: int, modes, style: StyleTrainConfig,
                    spec: EncoderSpec | None = None, csg: CsgConfig | None = None,
                    lam: float = 1.0, n_groups: int = 4) -> list[SweepRun]:
    """SD and SC of trained styles for every (N, seed, mode). Seeds are 0..seeds-1."""
    spec = spec or EncoderSpec()
    csg = csg or CsgConfig()
    runs = []
    for n in n_values:
        for seed in range(seeds):
            encoder, names, css = _setting(n, seed, spec, csg, n_groups)
            for mode in modes:
                result, sd, sc = run_mode(mode, encoder, names, css, style, lam, seed)
                runs.append(SweepRun(mode, n, seed, lam, sd, sc, result.wall_clock, len(css)))
                log.info("N=%d seed=%d %s: SD %.4f SC %.4f", n, seed, mode, sd, sc)
    return runs


def lambda_sweep(lams, seeds: int, mode: str, n: int, style: StyleTrainConfig,
                 spec: EncoderSpec | None = None, csg: CsgConfig | None = None,
                 n_groups: int = 4) -> list[SweepRun]:
    spec = spec or EncoderSpec()
    csg = csg or CsgConfig()
    runs = []
    for seed in range(seeds):
        encoder, names, css = _setting(n, seed, spec, csg, n_groups)
        for lam in lams:
            result, sd, sc = run_mode(mode, encoder, names, css, style, lam, seed)
            runs.append(SweepRun(mode, n, seed, lam, sd, sc, result.wall_clock, len(css)))
    return runs


def summarize(runs: list[SweepRun], key: str) -> dict:
    """Mean and population std of SD and SC grouped by ``(mode, key)``."""
    groups: dict = {}
    for r in runs:
        groups.setdefault((r.mode, getattr(r, key)), []).append(r)
    out = {}
    for (mode, value), items in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        sds = np.array([r.sd for r in items])
        scs = np.array([r.sc for r in items])
        out[(mode, value)] = {"mode": mode, key: value, "runs": len(items),
                              "sd_mean": float(sds.mean()), "sd_std": float(sds.std()),
                              "sc_mean": float(scs.mean()), "sc_std": float(scs.std())}
    return out


def timing_bench(style: StyleTrainConfig, n: int, repeats: int = 3,
                 spec: EncoderSpec | None = None, csg: CsgConfig | None = None,
                 lam: float = 1.0, modes=("batstyler", "baseline-sequential"),
                 n_groups: int = 4) -> dict:
    """Median stage-1 wall clock per mode at matched step budgets."""
    spec = spec or EncoderSpec()
    encoder, names, css = _setting(n, style.seed, spec, csg or CsgConfig(), n_groups)
    steps = {}

    def runner(mode):
        def run():
            result = train_styles(mode, encoder, style, css=css, categories=names,
                                  baseline=BaselineLossConfig(lam))
            steps[mode] = result.steps
        return run

    table = timing_compare({m: runner(m) for m in modes}, repeats)
    for m in modes:
        table[m]["steps"] = steps[m]
    return table
