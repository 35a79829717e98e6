"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import itertools
import math

import numpy as np
import pytest

from convbias import data as D
from convbias import functional as F
from convbias import mdl
from convbias import training as T
from convbias.analytics import permute_first_layer, permute_pixels
from convbias.architectures import (ArchSpec, Family, build, built_weight_count,
                                    layer_param_counts, param_count)
from convbias.cli import EXIT_OK, main
from convbias.layers import CONV_LIKE, FC_LIKE
from convbias.optim import (BETA_LASSO, OptimizerConfig, OptimizerState, beta_lasso_step,
                            cosine_lr, sgd_step)
from conftest import write_synthetic_mnist
from helpers import MNIST_DIR, check_network_grads, have_mnist, naive_conv, naive_fc
from test_mdl import assert_prefix_free, sharing_maps
from test_network import LAYER_CASES, _single

needs_mnist = pytest.mark.skipif(not have_mnist(), reason=f"MNIST not found in {MNIST_DIR}")


def spec_of(family, alpha=1, s=32, c=10, C=3):
    family = Family(family)
    return ArchSpec(family, alpha=alpha, image_size=s, num_classes=c, in_channels=C,
                    hidden=16 * alpha if family is Family.THREE_FC else None)


def test_c01_parameter_counts(criterion):
    got = {
        "D-CONV(15)": (param_count(spec_of("d-conv", 15)), 1_445_955, 1.45e6, 0.005),
        "S-CONV(150)": (param_count(spec_of("s-conv", 150)), 138_312_450, 138e6, 0.005),
        "S-FC(150)": (param_count(spec_of("s-fc", 150)), 256_240_800, 256e6, 0.005),
        "D-LOCAL(15)": (param_count(spec_of("d-local", 15)), 3_403_320, 3.42e6, 0.02),
    }
    bad = [k for k, (n, exact, pub, tol) in got.items()
           if n != exact or abs(n - pub) / pub > tol]
    detail = ", ".join(f"{k}={v[0]:,}" for k, v in got.items())
    assert criterion(1, not bad, detail + (f"; mismatched {bad}" if bad else "")), bad


def test_c02_builder_formula_grid(criterion):
    # every family on the same grid; the D-LOCAL builder allocates a kernel
    # per output location in every layer, which the tabulated formula does not
    grid = [(1, 16, 10, 3), (2, 32, 10, 3), (3, 16, 5, 1), (1, 48, 2, 3), (4, 32, 100, 3)]
    combos = [(f, *g) for f in Family for g in grid]
    mismatched = []
    for family, a, s, c, C in combos:
        spec = spec_of(family, a, s, c, C)
        built, formula = built_weight_count(spec), param_count(spec)
        if built != formula:
            mismatched.append(f"{family.value}(a={a},s={s}): built {built:,} vs {formula:,}")
    ok = not mismatched
    detail = f"{len(combos) - len(mismatched)}/{len(combos)} combinations equal"
    if mismatched:
        detail += "; " + "; ".join(mismatched[:2]) + (" ..." if len(mismatched) > 2 else "")
    assert criterion(2, ok, detail), mismatched


def test_c03_kernel_oracles(criterion):
    r = np.random.default_rng(3)
    worst, count = 0.0, 0
    for _ in range(40):
        N, I, O = r.integers(1, 4), r.integers(1, 9), r.integers(1, 6)
        x, W, b = r.normal(size=(N, I)), r.normal(size=(O, I)), r.normal(size=O)
        worst = max(worst, np.max(np.abs(F.fc_forward(x, W, b) - naive_fc(x, W, b))))
        count += 1
    for _ in range(40):
        k, stride, pad = int(r.integers(1, 4)), int(r.integers(1, 3)), int(r.integers(0, 2))
        H = int(r.integers(k, 7))
        Cin, Cout = int(r.integers(1, 3)), int(r.integers(1, 4))
        x = r.normal(size=(2, Cin, H, H))
        K, b = r.normal(size=(Cout, Cin, k, k)), r.normal(size=Cout)
        worst = max(worst, np.max(np.abs(F.conv2d_forward(x, K, b, stride, pad)
                                         - naive_conv(x, K, b, stride, pad))))
        Ho = F.output_size(H, k, stride, pad)
        KL, bL = r.normal(size=(Cout, Ho, Ho, Cin, k, k)), r.normal(size=(Cout, Ho, Ho))
        worst = max(worst, np.max(np.abs(F.local2d_forward(x, KL, bL, stride, pad)
                                         - naive_conv(x, KL, bL, stride, pad, local=True))))
        # sharing collapse: a local layer with one kernel everywhere is the conv
        shared = np.broadcast_to(K[:, None, None], KL.shape).copy()
        sb = np.broadcast_to(b[:, None, None], bL.shape).copy()
        worst = max(worst, np.max(np.abs(F.local2d_forward(x, shared, sb, stride, pad)
                                         - F.conv2d_forward(x, K, b, stride, pad))))
        count += 3
    ok = count >= 100 and worst <= 1e-12
    assert criterion(3, ok, f"{count} instances, max abs error {worst:.2e}"), worst


def test_c04_gradients(criterion):
    r = np.random.default_rng(4)
    results = {}
    for name, (make, shape) in sorted(LAYER_CASES.items()):
        net = _single(make(), shape)
        worst = check_network_grads(net, r.normal(size=(4,) + shape), r.integers(0, 3, 4),
                                    per_param=20)
        results[name] = max(worst.values())
    for family in (Family.S_CONV, Family.S_LOCAL, Family.S_FC):
        net = build(ArchSpec(family, alpha=2, image_size=8, num_classes=3), seed=5,
                    dtype=np.float64)
        worst = check_network_grads(net, r.normal(size=(4, 3, 8, 8)), r.integers(0, 3, 4),
                                    per_param=8)
        results[family.value] = max(worst.values())
    bad = {k: v for k, v in results.items() if not v <= 1e-4}
    detail = f"{len(results)} checks, max rel error {max(results.values()):.2e}"
    assert criterion(4, not bad, detail + (f"; failing {bad}" if bad else "")), bad


def _param(value, grad, group=CONV_LIKE):
    from convbias.layers import Parameter
    return Parameter("p", np.array(value, float), np.array(grad, float), group)


def _lasso(lam, beta):
    return OptimizerConfig(lambda_by_group={CONV_LIKE: lam, FC_LIKE: lam}, beta=beta,
                           algorithm=BETA_LASSO)


def test_c05_beta_lasso(criterion):
    checks = {}
    p = _param([0.5, 0.8, -0.8], [0, 0, 0])
    beta_lasso_step([p], _lasso(0.01, 50.0), OptimizerState(), 0.1)
    checks["hand examples"] = (p.value[0] == 0.0 and abs(p.value[1] - 0.799) < 1e-15
                               and abs(p.value[2] + 0.799) < 1e-15)

    r = np.random.default_rng(5)
    theta = r.uniform(-1, 1, 10_000)
    p = _param(theta.copy(), np.zeros_like(theta))
    beta_lasso_step([p], _lasso(0.003, 50.0), OptimizerState(), 0.1)
    keep = np.abs(theta - 0.1 * 0.003 * np.sign(theta)) >= 50.0 * 0.003
    checks["support law"] = bool(np.array_equal(p.value != 0, keep))

    same = True
    for _ in range(20):
        t, g = r.normal(size=100), r.normal(size=100)
        a, b = _param(t.copy(), g), _param(t.copy(), g)
        beta_lasso_step([a], _lasso(0.0, 77.0), OptimizerState(), 0.05)
        sgd_step([b], OptimizerConfig(), OptimizerState(), 0.05)
        same &= bool(np.array_equal(a.value, b.value))
    checks["lambda=0 is sgd"] = same

    t = r.uniform(-1, 1, 10_000)
    p = _param(t.copy(), np.zeros_like(t))
    for _ in range(10):
        p.grad[...] = r.normal(scale=0.01, size=t.size)
        beta_lasso_step([p], _lasso(1e-3, 0.0), OptimizerState(), 0.1)
    checks["beta=0 keeps nonzeros"] = bool(np.all(p.value != 0))
    bad = [k for k, v in checks.items() if not v]
    assert criterion(5, not bad, ", ".join(f"{k}: {'ok' if v else 'no'}"
                                           for k, v in checks.items())), bad


def test_c06_cosine(criterion):
    eta0, tau = 0.1, 1000
    vals = (cosine_lr(0, tau, eta0), cosine_lr(tau // 2, tau, eta0), cosine_lr(tau, tau, eta0))
    ok = vals == (eta0, eta0 / 2, 0.0)
    assert criterion(6, ok, f"eta(0)={vals[0]}, eta(tau/2)={vals[1]}, eta(tau)={vals[2]}"), vals


def test_c07_mdl(criterion):
    sig4 = lambda x: float(f"{x:.4g}")
    ex = {
        "dense bound": sig4(mdl.bound_theorem1(0.1, 1000, 50_000, 0.01)) == 0.2004,
        "desc_len": mdl.sharing_desc_len(10 ** 6, 10 ** 3, 10 ** 3) == 29_938,
        "small": mdl.sharing_desc_len(4, 2, 1) == 7,
        "sharing bound": sig4(mdl.bound_theorem2(mdl.BoundInput(0.0, 50_000, 0.05, 10 ** 6, 10 ** 3,
                                                       16, 10 ** 3))) == 0.6780,
    }
    r = np.random.default_rng(7)
    mono = 0
    for _ in range(2000):
        n = int(r.integers(2, 10 ** 6))
        k, nnz, b = int(r.integers(1, n)), int(r.integers(0, n + 1)), int(r.integers(1, 64))
        m, delta, loss = int(r.integers(1, 10 ** 6)), float(r.uniform(1e-6, 0.999)), r.random()
        v = mdl.bound_theorem2(mdl.BoundInput(loss, m, delta, n, k, b, nnz))
        ok = (mdl.bound_theorem2(mdl.BoundInput(loss, m, delta, n, k + 1, b, nnz)) > v
              and mdl.bound_theorem2(mdl.BoundInput(loss, m, delta, n, k, b + 1, nnz)) > v
              and mdl.bound_theorem2(mdl.BoundInput(loss, m + 1, delta, n, k, b, nnz)) < v
              and mdl.sharing_desc_len(n + 1, k, nnz) >= mdl.sharing_desc_len(n, k, nnz))
        mono += not ok
    ex["monotone (2000 draws)"] = mono == 0
    total = 0
    for n in range(1, 9):
        codes = [mdl.encode_sharing(s) for s in sharing_maps(n)]
        assert len(set(codes)) == len(codes)
        assert_prefix_free(codes)
        total += len(codes)
    ex[f"prefix-free n<=8 ({total} codes)"] = True
    bad = [k for k, v in ex.items() if not v]
    assert criterion(7, not bad, ", ".join(f"{k}: {'ok' if v else 'no'}"
                                           for k, v in ex.items())), bad


def _trajectory(network, dataset, epochs=2, batch=100, seed=0):
    spe = T.steps_per_epoch(len(dataset), batch)
    cfg = OptimizerConfig(eta0=0.1, total_steps=epochs * spe)
    state, losses = OptimizerState(), []
    for epoch in range(1, epochs + 1):
        T.train_epoch(network, dataset, cfg, state, epoch, batch, seed, step_losses=losses)
    return losses


@needs_mnist
def test_c08_permutation_equivariance(criterion):
    train, _ = D.load("mnist", MNIST_DIR)
    sub = train.subset(np.arange(1000))
    spec = ArchSpec(Family.S_FC, alpha=4, image_size=28, num_classes=10, in_channels=1)
    net = build(spec, seed=0, canonical_input_sum=True)
    permuted, perm = permute_pixels(sub, seed=123)
    net_p = permute_first_layer(net, perm)
    base = _trajectory(net, sub)
    other = _trajectory(net_p, permuted)
    W, Wp = net.params["conv1.weight"].value, net_p.params["conv1.weight"].value
    same_w = np.array_equal(Wp, W[:, perm])
    ok = base == other and same_w
    diff = sum(a != b for a, b in zip(base, other))
    detail = (f"{len(base)} steps, {diff} differing losses, first-layer weights "
              f"{'equal up to the permutation' if same_w else 'differ'}")
    assert criterion(8, ok, detail)


@needs_mnist
def test_c09_sparsity_trend(criterion, tmp_path):
    loaded = D.load("mnist", MNIST_DIR)
    common = dict(arch="s-fc", alpha=8, data_dir=str(MNIST_DIR), epochs=10, batch_size=128,
                  seed=0, lr=0.1)
    lasso = T.make_config({**common, "optimizer": BETA_LASSO, "beta": 50.0,
                           "lambda_conv": 1e-5, "lambda_fc": 1e-6,
                           "out_dir": str(tmp_path / "lasso")})
    sgd = T.make_config({**common, "optimizer": "sgd", "out_dir": str(tmp_path / "sgd")})
    res_l, res_s = T.train_run(lasso, loaded), T.train_run(sgd, loaded)

    def first_frac(res):
        w = res["network"].params["conv1.weight"].value
        return np.count_nonzero(w) / w.size

    acc, frac_l, frac_s = res_l["records"][-1]["test_acc"], first_frac(res_l), first_frac(res_s)
    checks = {"beta-lasso test acc >= 0.95": acc >= 0.95,
              "beta-lasso first layer < 25% nonzero": frac_l < 0.25,
              "sgd first layer > 99% nonzero": frac_s > 0.99}
    detail = (f"test acc {acc:.4f}, beta-lasso nonzero {frac_l:.4f}, sgd nonzero {frac_s:.4f}"
              + "".join(f"; failed: {k}" for k, v in checks.items() if not v))
    assert criterion(9, all(checks.values()), detail), checks


def test_c10_determinism(criterion, tmp_path):
    data = MNIST_DIR if have_mnist() else write_synthetic_mnist(tmp_path / "data")
    outs = []
    for name in ("a", "b"):
        argv = ["train", "--data-dir", str(data), "--out-dir", str(tmp_path / name),
                "--arch", "s-fc", "--alpha", "2", "--epochs", "2", "--train-limit", "3000",
                "--batch-size", "128", "--dropout", "0.2", "--augment", "true",
                "--hflip", "false", "--optimizer", "beta-lasso", "--lambda-conv", "1e-4",
                "--lambda-fc", "1e-5"]
        assert main(argv) == EXIT_OK
        outs.append((tmp_path / name / "metrics.jsonl").read_bytes())
    ok = outs[0] == outs[1] and len(outs[0]) > 0
    detail = f"metrics.jsonl {'byte-identical' if ok else 'differs'} ({len(outs[0])} bytes)"
    assert criterion(10, ok, detail)
