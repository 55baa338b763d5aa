"""The ten acceptance criteria, each at its stated tolerance.

Every test prints one ``PASS``/``FAIL criterion N: ...`` line (also repeated
in the terminal summary) and then asserts.
"""
import json
import math
import time

import numpy as np
import pytest
import torch

from oracles import (central_difference, logsumexp_ce, mock_encode, relative_error,
                     sd_double_loop, brute_force_kmeans, select_k_oracle, cosine)
from stylesynth.classifier import arcface_loss
from stylesynth.cli import main
from stylesynth.encoders import EncoderSpec, MockEncoder, assemble_prompt
from stylesynth.etf import build_etf
from stylesynth.llm import LLMClient, ReplayTransport
from stylesynth.losses import (loss_ce, loss_content, loss_sc, loss_style_orth, style_features)
from stylesynth.metrics import metric_sc, metric_sd
from stylesynth.reports import diversity_sweep, lambda_sweep, summarize, timing_bench
from stylesynth.semantics import CsgConfig, LLMExtractor, build_css, cluster, select_k
from stylesynth.style_trainer import StyleTrainConfig

TOY = ["tabby cat", "tiger cat", "sports car", "minivan"]
N_VALUES = (5, 50, 200)
SEEDS = 5


def blobs(seed, sizes, dim=3, spread=0.05):
    rng = np.random.default_rng(seed)
    centres = rng.standard_normal((len(sizes), dim))
    centres /= np.linalg.norm(centres, axis=1, keepdims=True)
    pts = np.concatenate([c + spread * rng.standard_normal((n, dim)) for c, n in zip(centres, sizes)])
    rng.shuffle(pts)
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def test_c1_etf_geometry(verdict):
    start = time.perf_counter()
    worst = 0.0
    for k in (2, 4, 16, 80):
        for p in (k, 512, 1024):
            cols = build_etf(k, p, 0).columns
            gram = cols.T @ cols
            off = gram[~np.eye(k, dtype=bool)]
            worst = max(worst, np.max(np.abs(np.diag(gram) - 1)), np.max(np.abs(off + 1 / (k - 1))),
                        np.linalg.norm(cols.sum(1)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and elapsed < 5
    verdict(1, ok, f"max deviation {worst:.2e} (tol 1e-6), {elapsed:.2f}s (< 5s)")
    assert ok


def _fd(loss_fn, x0):
    x = torch.tensor(x0, requires_grad=True)
    loss_fn(x).backward()
    fd = central_difference(lambda v: float(loss_fn(torch.from_numpy(v))), x0, 1e-5)
    return relative_error(x.grad.numpy(), fd)


def test_c2_gradient_fidelity(verdict):
    worst = {}
    for seed in range(20):
        enc = MockEncoder(seed=seed, token_dim=16, joint_dim=32)
        rng = np.random.default_rng(seed)
        theta0 = rng.standard_normal((4, 16)) * 0.3
        etf = build_etf(4, 32, seed)
        f = rng.standard_normal((6, 32))
        f /= np.linalg.norm(f, axis=1, keepdims=True)
        y = rng.permutation(6) % 4
        errs = {
            "L_CE": _fd(lambda th: loss_ce(style_features(th, enc), etf.columns, [0, 1, 2, 3], 2.0), theta0),
            "L_SC": _fd(lambda th: loss_sc(th, ["cat", "sports car"], enc), theta0),
            "L_style_orth": _fd(lambda th: loss_style_orth(style_features(th, enc)), theta0),
            "L_content": _fd(lambda th: loss_content(th, ["tabby cat", "minivan", "oak"], enc), theta0),
            "ArcFace": _fd(lambda w: arcface_loss(w, f, y, 5.0, 0.5), rng.standard_normal((4, 32))),
        }
        for name, err in errs.items():
            worst[name] = max(worst.get(name, 0.0), err)
    ok = all(v < 1e-4 for v in worst.values())
    verdict(2, ok, "max relative error over 20 seeds: " +
            ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (tol 1e-4)")
    assert ok


def test_c3_oracle_equivalence(verdict):
    errs = {"metric_sd": 0.0, "metric_sc": 0.0, "loss_ce": 0.0, "arcface(m=0,s=1)": 0.0}
    for seed in range(10):
        rng = np.random.default_rng(seed)
        feats = rng.standard_normal((7, 12))
        errs["metric_sd"] = max(errs["metric_sd"], abs(metric_sd(feats) - sd_double_loop(feats)))
        enc = MockEncoder(seed=seed, token_dim=16, joint_dim=32)
        th = rng.standard_normal((3, 16)) * 0.3
        names = ["dog", "red fox"]
        vals = [cosine(mock_encode(n.split(), None, seed, 16, 32),
                       mock_encode(list(assemble_prompt("style-content", i, n).tokens), th[i], seed, 16, 32))
                for i in range(3) for n in names]
        errs["metric_sc"] = max(errs["metric_sc"], abs(metric_sc(th, names, enc) - np.mean(vals)))
        t = build_etf(6, 12, seed)
        f = rng.standard_normal((5, 12))
        f /= np.linalg.norm(f, axis=1, keepdims=True)
        y = rng.integers(0, 6, 5)
        errs["loss_ce"] = max(errs["loss_ce"], abs(float(loss_ce(f, t.columns, y, 3.0)) -
                                                   logsumexp_ce(3.0 * f @ t.columns, y)))
        w = rng.standard_normal((4, 12))
        wn = w / np.linalg.norm(w, axis=1, keepdims=True)
        yy = rng.integers(0, 4, 5)
        errs["arcface(m=0,s=1)"] = max(errs["arcface(m=0,s=1)"],
                                       abs(float(arcface_loss(w, f, yy, 1.0, 0.0)) - logsumexp_ce(f @ wn.T, yy)))
    kmeans_ok = kmeans_n = 0
    for seed in range(8):
        for k, n in ((2, 12), (3, 10)):
            sizes = [n // k + (1 if i < n % k else 0) for i in range(k)]
            x = blobs(seed, sizes)
            kmeans_n += 1
            kmeans_ok += tuple(cluster(x, k, seed=seed).tolist()) == brute_force_kmeans(x, k)[0]
    selk_ok = selk_n = 0
    for seed in range(6):
        k_true = 2 + seed % 2
        x = blobs(100 + seed, [3] * k_true + ([2] if k_true == 2 else []))
        selk_n += 1
        selk_ok += select_k(x, CsgConfig(seed=seed)) == select_k_oracle(x)
    ok = all(v < 1e-10 for v in errs.values()) and kmeans_ok == kmeans_n and selk_ok == selk_n
    verdict(3, ok, ", ".join(f"{k} {v:.1e}" for k, v in errs.items()) +
            f" (tol 1e-10); KMeans exact {kmeans_ok}/{kmeans_n}; select_k exact {selk_ok}/{selk_n}")
    assert ok


def test_c4_closed_form_ce(verdict):
    worst = 0.0
    for k in (2, 4, 16):
        for s in (1.0, 5.0):
            t = build_etf(k, 32, 1)
            got = float(loss_ce(t.columns.T, t.columns, list(range(k)), s))
            worst = max(worst, abs(got - math.log(1 + (k - 1) * math.exp(-s * k / (k - 1)))))
    ok = worst < 1e-9
    verdict(4, ok, f"max |CE - ln(1+(K-1)e^(-sK/(K-1)))| = {worst:.1e} (tol 1e-9)")
    assert ok


STAGES = ("extract-semantics", "build-etf", "train-styles", "train-classifier", "evaluate")


def _pipeline(cfg_path, *extra):
    for stage in STAGES:
        assert main([stage, "--config", str(cfg_path), *extra]) == 0, stage


def _arrays(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*.arr"))}


def test_c5_determinism(tmp_path, verdict):
    cfg = {"backend": {"seed": 1}, "categories": {"names": TOY}, "style": {"k": 8, "epochs": 30},
           "classifier": {"epochs": 20}}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    _pipeline(path, f"--out={tmp_path / 'a'}")
    first = _arrays(tmp_path / "a")
    _pipeline(path, f"--out={tmp_path / 'a'}")
    _pipeline(path, f"--out={tmp_path / 'b'}")
    for mode in ("baseline-parallel", "baseline-sequential"):
        for out in ("c", "d"):
            assert main(["train-styles", "--config", str(path), f"--out={tmp_path / out / mode}",
                         "--mode", mode]) == 0
    same_rerun = _arrays(tmp_path / "a") == first
    same_fresh = _arrays(tmp_path / "b") == first
    same_modes = all(_arrays(tmp_path / "c" / m) == _arrays(tmp_path / "d" / m)
                     for m in ("baseline-parallel", "baseline-sequential"))
    ok = same_rerun and same_fresh and same_modes and len(first) == 3
    verdict(5, ok, f"{len(first)} arrays byte-identical on rerun={same_rerun}, fresh dir={same_fresh}, "
                   f"baseline modes={same_modes}")
    assert ok


def test_c6_end_to_end(tmp_path, verdict):
    cfg = {"output_dir": str(tmp_path / "run"),
           "categories": {"synthetic_n": 20, "synthetic_groups": 4},
           "csg": {"extractor": "stub"}, "style": {"k": 16},
           "evaluation": {"domains": {"sigma0.0": 0.0, "sigma0.2": 0.2}, "per_class": 5}}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    start = time.perf_counter()
    _pipeline(path)
    elapsed = time.perf_counter() - start
    root = tmp_path / "run"
    history = (root / "styles" / "history.csv").read_text().splitlines()
    col = history[0].split(",").index("loss_total")
    loss = np.array([float(r.split(",")[col]) for r in history[1:]])
    w = max(1, len(loss) // 10)
    windows = loss[: len(loss) // w * w].reshape(-1, w).mean(1)
    decreasing = bool(np.all(np.diff(windows) < 0))
    etf_acc = json.loads((root / "styles" / "summary.json").read_text())["etf_train_accuracy"]
    acc = json.loads((root / "evaluation" / "metrics.json").read_text())["per_domain"]
    css = json.loads((root / "semantics" / "css.json").read_text())
    ok = (decreasing and etf_acc == 1.0 and acc["sigma0.0"] == 1.0 and acc["sigma0.2"] >= 0.8
          and elapsed < 300)
    verdict(6, ok, f"k={css['k']}, {len(windows)} windows of {w} epochs strictly decreasing={decreasing}, "
                   f"ETF accuracy {etf_acc:.3f}, acc(s=0) {acc['sigma0.0']:.3f}, "
                   f"acc(s=0.2) {acc['sigma0.2']:.3f} (>= 0.8), {elapsed:.1f}s (< 300s)")
    assert ok


@pytest.mark.slow
def test_c7_diversity_trend(verdict):
    runs = diversity_sweep(N_VALUES, SEEDS, ("batstyler", "baseline-sequential"), StyleTrainConfig(),
                           lam=1.0)
    s = summarize(runs, "n")
    ours = [s[("batstyler", n)]["sd_mean"] for n in N_VALUES]
    base = [s[("baseline-sequential", n)]["sd_mean"] for n in N_VALUES]
    below = [a <= b for a, b in zip(ours, base)]
    monotone = all(b2 >= b1 for b1, b2 in zip(base, base[1:]))
    ok = all(below) and monotone
    verdict(7, ok, "mean SD over 5 seeds, N=" + "/".join(map(str, N_VALUES)) + ": batstyler " +
            "/".join(f"{v:.4f}" for v in ours) + ", baseline(lam=1) " +
            "/".join(f"{v:.4f}" for v in base) + f"; batstyler<=baseline {below}, "
            f"baseline non-decreasing {monotone}")
    assert ok


@pytest.mark.slow
def test_c8_lambda_sweep(verdict):
    runs = lambda_sweep([0.1, 1.0], SEEDS, "baseline-sequential", 20, StyleTrainConfig())
    s = summarize(runs, "lam")
    lo, hi = s[("baseline-sequential", 0.1)], s[("baseline-sequential", 1.0)]
    sd_ok = lo["sd_mean"] <= hi["sd_mean"]
    sc_ok = lo["sc_mean"] <= hi["sc_mean"]
    ok = sd_ok and sc_ok
    verdict(8, ok, f"N=20, 5 seeds: SD lam=0.1 {lo['sd_mean']:.4f} vs lam=1 {hi['sd_mean']:.4f} "
                   f"(<= {sd_ok}); SC {lo['sc_mean']:.4f} vs {hi['sc_mean']:.4f} (<= {sc_ok})")
    assert ok


@pytest.mark.slow
def test_c9_timing(verdict):
    table = timing_bench(StyleTrainConfig(k=80, epochs=20), 200, repeats=5,
                         spec=EncoderSpec(joint_dim=1024, token_dim=512))
    par, seq = table["batstyler"], table["baseline-sequential"]
    ratio = seq["median"] / par["median"]
    ok = par["steps"] == seq["steps"] and ratio >= 3.0
    verdict(9, ok, f"K=80, N=200, {par['steps']} steps each: median parallel {par['median']:.2f}s, "
                   f"sequential {seq['median']:.2f}s, speedup {ratio:.2f}x (>= 3)")
    assert ok


def test_c10_csg_replay(tmp_path, fixtures_dir, verdict):
    fixture = fixtures_dir / "toy_llm_replay.json"
    cache = tmp_path / "llm_cache.json"
    enc = MockEncoder(seed=1)
    first_client = LLMClient(ReplayTransport(fixture), cache)
    cfg = CsgConfig(extractor="llm")
    first = build_css(TOY, enc, cfg, LLMExtractor(first_client, 3))
    second_client = LLMClient(ReplayTransport(fixture), cache)
    second = build_css(TOY, enc, cfg, LLMExtractor(second_client, 3))
    ok = (first.splits == 1 and first_client.transport.requests > 0
          and second_client.transport.requests == 0 and second.css == first.css)
    verdict(10, ok, f"splits={first.splits}, first run {first_client.transport.requests} requests, "
                    f"cached rerun {second_client.transport.requests} requests")
    assert ok
