"""Acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line straight to the terminal
(also under ``pytest -v``) before asserting. Criteria 7 and 8 train real
networks and are marked ``slow``; they take roughly 8 and 17 minutes on one
CPU core.
"""

import itertools
import math
import time

import numpy as np
import pytest
import torch

from daf3d import metrics as M
from daf3d.cli import main as cli_main
from daf3d.config import ExperimentConfig, TrainConfig
from daf3d.head import DAFNet, NetworkConfig, tiny_config
from daf3d.loss import LossWeights, bce_loss, dice_loss, total_loss
from daf3d.head import PredictionBundle
from daf3d.stats import anova_f, rank_sum_test
from daf3d.trainer import build_model, predict_volume, train
from daf3d.volume_data import PhantomSpec, Volume, synth_phantom

from conftest import random_mask
from oracles import brute_adb_hd95, enum_rank_sum_p, fd_gradient_check


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        assert ok, detail
    return emit


def test_criterion_01_metric_oracle(report):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    mismatches, identity_err, n = [], 0.0, 0
    while n < 100:
        shape = tuple(int(x) for x in rng.integers(2, 17, size=3))
        s, g = random_mask(rng, shape), random_mask(rng, shape)
        if not s.any() or not g.any():
            continue
        n += 1
        r = M.evaluate_case(s, g)
        a, h = brute_adb_hd95(s, g)
        if r.adb != a or r.hd95 != h:
            mismatches.append((shape, r.adb, a, r.hd95, h))
        if r.jaccard > 0:
            identity_err = max(identity_err, abs(r.jaccard - r.dice / (2 - r.dice)),
                               abs(r.cc - (2 - 1 / r.jaccard)))
    secs = time.perf_counter() - t0
    ok = not mismatches and identity_err < 1e-12 and secs < 60
    report(1, ok, f"{n} pairs, {len(mismatches)} adb/hd95 mismatches, "
                  f"max identity error {identity_err:.1e}, {secs:.1f} s")


def test_criterion_02_shifted_cubes(report):
    g = np.zeros((6, 6, 6), np.uint8)
    g[1:3, 1:3, 1:3] = 1
    s = np.roll(g, 1, axis=0)
    # counting oracle
    inter, ns, ng = int((s & g).sum()), int(s.sum()), int(g.sum())
    union = ns + ng - inter
    want = (2 * inter / (ns + ng), inter / union, 2 - union / inter)
    got = M.overlap_metrics(s, g)[:3]
    ok = got == want == (0.5, 1 / 3, -1.0)
    report(2, ok, f"dice {got[0]}, jaccard {got[1]}, cc {got[2]}")


def test_criterion_03_gradient_check(report):
    torch.manual_seed(3)
    net = DAFNet(tiny_config(backbone=dict(channels=(8, 16, 32, 64)))).double()
    x = torch.randn(1, 1, 16, 16, 8, dtype=torch.float64)
    g = torch.zeros_like(x)
    g[..., 4:12, 3:11, 2:6] = 1
    t0 = time.perf_counter()
    res = fd_gradient_check(net, lambda: total_loss(net(x), g), n_samples=250, seed=3, h=1e-5)
    secs = time.perf_counter() - t0
    worst = max(res)
    ok = len(res) >= 200 and worst[0] < 1e-4 and secs < 600
    report(3, ok, f"{len(res)} parameters, max rel error {worst[0]:.2e} ({worst[3]}), {secs:.0f} s")


def test_criterion_04_loss_identities(report):
    D = torch.float64
    gen = torch.Generator().manual_seed(4)
    g = (torch.rand(8, 8, 8, generator=gen, dtype=D) > 0.5).to(D)
    d0 = dice_loss(g.clone(), g).item()
    b_err = abs(bce_loss(torch.full_like(g, 0.5), g).item() - math.log(2))
    g5 = g[None, None]
    bundle = PredictionBundle([torch.rand(1, 1, 8, 8, 8, generator=gen, dtype=D) for _ in range(4)],
                              [torch.rand(1, 1, 8, 8, 8, generator=gen, dtype=D) for _ in range(4)],
                              torch.rand(1, 1, 8, 8, 8, generator=gen, dtype=D), None)
    w = LossWeights()
    homog = all(total_loss(bundle, g5, w.scaled(k)).item() == k * total_loss(bundle, g5, w).item()
                for k in (2.0, 4.0, 0.5))
    default = ExperimentConfig().loss.as_tuple()
    weights_ok = default == (0.4, 0.5, 0.7, 0.8, 0.4, 0.5, 0.7, 0.8, 1.0)
    ok = d0 < 1e-7 and b_err <= 1e-9 and homog and weights_ok
    report(4, ok, f"dice(p=g) {d0:.1e}, |bce(0.5) - ln 2| {b_err:.1e}, homogeneity exact {homog}, "
                  f"default weights {default}")


def test_criterion_05_shape_closure(report):
    net = DAFNet(tiny_config()).eval()
    rng = np.random.default_rng(5)
    bad = []
    with torch.no_grad():
        for _ in range(20):
            shape = (int(rng.integers(8, 49)), int(rng.integers(8, 49)), int(rng.integers(8, 33)))
            b = net(torch.randn(1, 1, *shape))
            if any(tuple(p.shape[2:]) != shape for p in b.all()) or len(b.all()) != 9:
                bad.append(shape)
        slf = net.features(torch.zeros(1, 1, 170, 132, 80))["slf"]
    slf_shapes = {tuple(s.shape[2:]) for s in slf}
    ok = not bad and slf_shapes == {(43, 33, 40)}
    report(5, ok, f"20 random sizes, {len(bad)} mismatched; 170x132x80 SLFs at {sorted(slf_shapes)}")


def test_criterion_06_attention(report):
    net = DAFNet(tiny_config()).eval()
    x = torch.randn(1, 1, 32, 32, 16)
    with torch.no_grad():
        maps = net(x, return_attention=True).attention_maps
        lo, hi = min(a.min().item() for a in maps), max(a.max().item() for a in maps)
        for am in net.attention.levels:
            am.zero_init_logits()
        zero = net(x, return_attention=True).attention_maps
    half = all(torch.equal(a, torch.full_like(a, 0.5)) for a in zero)
    ok = 0 < lo and hi < 1 and half and len(maps) == 4
    report(6, ok, f"attention range [{lo:.4f}, {hi:.4f}], zero logits give 0.5 exactly: {half}")


@pytest.mark.slow
def test_criterion_07_overfit_and_convergence(report):
    t0 = time.perf_counter()
    v, m = synth_phantom(PhantomSpec(seed=11))
    v.id = m.id = "overfit"
    res = train(TrainConfig(epochs=200, augment=False, seed=0), [(v, m)])
    dice = M.overlap_metrics(predict_volume(res.model, v).mask, m)[0]

    cases = []
    for i in range(8):
        vi, mi = synth_phantom(PhantomSpec(seed=100 + i))
        vi.id = mi.id = f"p{i}"
        cases.append((vi, mi))
    e = train(TrainConfig(epochs=5, seed=0), cases).epoch_losses
    ratio = e[4] / e[0]
    secs = time.perf_counter() - t0
    ok = len(res.curve) == 200 and dice >= 0.95 and ratio < 0.5 and secs < 1800
    report(7, ok, f"one phantom, 200 iterations: training Dice {dice:.4f}; 8 phantoms: "
                  f"epoch-5/epoch-1 mean loss {e[4]:.3f}/{e[0]:.3f} = {ratio:.3f}; {secs:.0f} s")


@pytest.mark.slow
def test_criterion_08_crossval(report, tmp_path):
    ini = tmp_path / "cv.ini"
    ini.write_text("[data]\nfolds = 4\n\n[train]\nseed = 0\nepochs = 20\n")
    t0 = time.perf_counter()
    assert cli_main(["synth", "--config", str(ini), "--count", "8", "--out", str(tmp_path / "data")]) == 0
    assert cli_main(["crossval", "--config", str(ini), "--manifest", str(tmp_path / "data" / "manifest.csv"),
                     "--out", str(tmp_path / "cv")]) == 0
    secs = time.perf_counter() - t0
    reps = M.read_reports_csv(tmp_path / "cv" / "crossval.csv")
    dice = [r.dice for r in reps]
    mean = float(np.mean(dice))
    ok = len(reps) == 8 and mean >= 0.85 and secs < 7200
    report(8, ok, f"4-fold, 8 phantoms: held-out Dice mean {mean:.4f} "
                  f"(min {min(dice):.4f}, max {max(dice):.4f}); {secs:.0f} s")


def test_criterion_09_latency(report):
    model = build_model(NetworkConfig(), seed=0)
    rng = np.random.default_rng(9)
    v = Volume(rng.random((170, 132, 80), dtype=np.float32))
    predict_volume(model, Volume(rng.random((16, 16, 8), dtype=np.float32)))  # warm-up
    pred = predict_volume(model, v)
    ok = math.isfinite(pred.seconds) and pred.seconds > 0 and pred.mask.shape == (170, 132, 80)
    report(9, ok, f"170x132x80 inference {pred.seconds:.2f} s on "
                  f"{torch.get_num_threads()} CPU thread(s) (reference 0.30 s on a GPU; not a gate)")


def test_criterion_10_statistics(report):
    rng = np.random.default_rng(10)
    worst, pairs = 0.0, 0
    for n, m in itertools.product(range(2, 9), repeat=2):
        for hi in (4, 1000):
            x, y = rng.integers(0, hi, n).tolist(), rng.integers(0, hi, m).tolist()
            worst = max(worst, abs(rank_sum_test(x, y).pvalue - enum_rank_sum_p(x, y)))
            pairs += 1
    f = anova_f([[1, 2, 3], [2, 3, 4]])
    ok = worst < 1e-12 and abs(f - 1.5) <= 1e-12
    report(10, ok, f"{pairs} sample pairs n,m in 2..8, max |p - enumeration| {worst:.1e}; ANOVA F {f!r}")
