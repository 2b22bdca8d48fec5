"""Acceptance suite: one test per criterion, one pass/fail line each (-v).

Criteria 5-7 share a single desk-scale sweep fixture: 6 architectures x 3
seeds trained on the synthetic 10-class set (the stand-in for a CIFAR-10
subset; no CIFAR binaries ship with the repo). Expect roughly one to two
hours for the full suite on a small multicore CPU; every other criterion
finishes in seconds. Run just the fast ones with:

    pytest tests/test_acceptance.py -v -k "not desk"

criterion 7 is a known, deliberate failure at this scale; see its comment
and the README's testing section.
"""

import concurrent.futures
import multiprocessing
import os

import numpy as np
import pytest

from streamnet import analysis, data_io, tensor as T
from streamnet.analysis import Histogram, kl_divergence
from streamnet.data_io import SyntheticSpec, generate_synthetic
from streamnet.networks import NetworkSpec, build_network
from streamnet.optim import Adam
from streamnet.slicing import (NoiseSpec, Xorshift64Star, corrupt_batch,
                               corruption_mask, make_slice_spec, noise_count,
                               slice_image)
from streamnet.training import (ExperimentConfig, final_window_mean, run_cell,
                                train, worker_count)

from oracles import rel_error

# ---------------------------------------------------------------------------
# Desk-scale protocol (criteria 5-7)
# ---------------------------------------------------------------------------

DESK_DATA = SyntheticSpec(n_classes=10, train_per_class=150, test_per_class=40,
                          channels=3, size=16, seed=7,
                          pattern_density=0.5, background_density=0.05)
DESK_BASE_FILTERS = (8, 16, 32, 64)
DESK_EPOCHS = 30
DESK_SEEDS = (1, 2, 3)
DESK_RATIO = 0.5
EXTRA_RATIOS = (0.6, 0.7, 0.8, 0.9)
ARCHS = ("V1", "V5", "V6", "V7", "V8-5", "V8-10")
# Desk-scale optimizer. The default betas (0.99, 0.9) blow up within a few
# hundred steps (beta1 > beta2 lets the update ratio grow on quiet
# coordinates), and the default lr was sized for runs with ~100x more
# optimizer steps; the sweep uses the conventional pair and a matched lr.
DESK_OPT = dict(lr=1e-3, beta1=0.9, beta2=0.999)


def desk_spec(arch: str, seed: int) -> NetworkSpec:
    common = dict(input_shape=(3, DESK_DATA.size, DESK_DATA.size),
                  n_classes=10, conv5_filters=10, fc_hidden=64,
                  base_filters=DESK_BASE_FILTERS, seed=seed)
    if arch == "V1":
        return NetworkSpec("V1", **common)
    if arch == "V5":
        return NetworkSpec("V5", width_multiplier=5, **common)
    if arch == "V6":
        return NetworkSpec("V6", n_streams=5, **common)
    if arch == "V7":
        return NetworkSpec("V7", width_multiplier=5,
                           slice_spec=make_slice_spec(5), **common)
    if arch == "V8-5":
        return NetworkSpec("V8", n_streams=5, slice_spec=make_slice_spec(5),
                           **common)
    if arch == "V8-10":
        return NetworkSpec("V8", n_streams=10, slice_spec=make_slice_spec(10),
                           **common)
    raise ValueError(arch)


def _run_desk_cell(job):
    """Train one (arch, seed) cell; runs inside a worker process."""
    arch, seed, out_dir = job
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(1)
    except ImportError:
        pass
    train_set, test_set = generate_synthetic(DESK_DATA)
    config = ExperimentConfig(network=desk_spec(arch, seed),
                              noise_ratio=DESK_RATIO, epochs=DESK_EPOCHS,
                              seed=seed, dataset="synthetic", **DESK_OPT)

    extra_window = {r: [] for r in EXTRA_RATIOS}
    callback = None
    if arch in ("V8-5", "V8-10"):
        corrupted = {r: corrupt_batch(test_set.images, NoiseSpec(r, seed=seed))
                     for r in EXTRA_RATIOS}

        def callback(epoch, net):
            if epoch > DESK_EPOCHS - 10:
                for r in EXTRA_RATIOS:
                    logits_hits = 0
                    images = corrupted[r]
                    for start in range(0, images.shape[0], 256):
                        logits = net.forward(images[start:start + 256])
                        logits_hits += int(
                            (logits.argmax(axis=1)
                             == test_set.labels[start:start + 256]).sum())
                    extra_window[r].append(logits_hits / images.shape[0])

    net, optimizer, log = train(config, train_set, test_set,
                                epoch_callback=callback)
    ckpt = os.path.join(out_dir, f"{arch}_{seed}.ckpt")
    data_io.save_checkpoint(ckpt, net, optimizer)
    data_io.atomic_write(os.path.join(out_dir, log.filename), log.to_csv().encode())
    return {
        "arch": arch,
        "seed": seed,
        "clean": final_window_mean(log, "clean_acc"),
        "noisy": final_window_mean(log, "noisy_acc"),
        "extra": {r: (float(np.mean(v)) if v else None)
                  for r, v in extra_window.items()},
        "checkpoint": ckpt,
    }


@pytest.fixture(scope="session")
def desk_sweep(tmp_path_factory):
    """All 18 desk-scale cells; the slow part of the acceptance suite."""
    out_dir = str(tmp_path_factory.mktemp("desk_sweep"))
    jobs = [(arch, seed, out_dir) for seed in DESK_SEEDS for arch in ARCHS]
    workers = min(worker_count(), len(jobs))
    if workers > 1:
        ctx = multiprocessing.get_context("fork")
        with concurrent.futures.ProcessPoolExecutor(workers, mp_context=ctx) as ex:
            results = list(ex.map(_run_desk_cell, jobs))
    else:
        results = [_run_desk_cell(j) for j in jobs]
    return {(r["arch"], r["seed"]): r for r in results}


def _seed_mean(results, arch, field="noisy"):
    return float(np.mean([results[(arch, s)][field] for s in DESK_SEEDS]))


# ---------------------------------------------------------------------------
# Criterion 1: gradient correctness, layer ops and full V1/V8 graphs
# ---------------------------------------------------------------------------

def _check_all_param_gradients(net, x, y, step=1e-5, tol=1e-4):
    net.zero_grad()
    net.loss_and_gradients(x, y)
    analytic = {pid: p.grad.copy() for pid, p in net.params.items()}
    worst = 0.0
    for pid, p in net.params.items():
        def loss_of(v, p=p):
            original = p.value.copy()
            p.value[...] = v
            logits = net.forward(x)
            p.value[...] = original
            return T.softmax_cross_entropy(logits, y)[0]

        fd = T.finite_difference_gradient(loss_of, p.value, step)
        worst = max(worst, float(rel_error(analytic[pid], fd, floor=1e-6).max()))
    assert worst < tol, f"worst relative gradient error {worst:.3e}"
    return worst


def test_criterion_1_gradient_correctness():
    rng = np.random.default_rng(101)

    # every layer type, random small cases
    x = rng.standard_normal((2, 2, 5, 4))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    probe = rng.standard_normal((2, 3, 5, 4))
    _, cache = T.conv2d(x, w, b, padding=1)
    gx, gw, gb = T.conv2d_backward(cache, probe)
    assert rel_error(gx, T.finite_difference_gradient(
        lambda v: float(np.sum(T.conv2d(v, w, b, 1)[0] * probe)), x)).max() < 1e-4
    assert rel_error(gw, T.finite_difference_gradient(
        lambda v: float(np.sum(T.conv2d(x, v, b, 1)[0] * probe)), w)).max() < 1e-4
    assert rel_error(gb, T.finite_difference_gradient(
        lambda v: float(np.sum(T.conv2d(x, w, v, 1)[0] * probe)), b)).max() < 1e-4

    xr = rng.standard_normal((1, 3, 4, 4))
    xr[np.abs(xr) < 1e-3] = 0.25
    probe_r = rng.standard_normal(xr.shape)
    _, cache = T.relu(xr)
    assert rel_error(T.relu_backward(cache, probe_r), T.finite_difference_gradient(
        lambda v: float(np.sum(T.relu(v)[0] * probe_r)), xr)).max() < 1e-4

    xp = rng.standard_normal((1, 2, 4, 4))
    probe_p = rng.standard_normal((1, 2, 2, 2))
    _, cache = T.maxpool2x2(xp)
    assert rel_error(T.maxpool2x2_backward(cache, probe_p),
                     T.finite_difference_gradient(
                         lambda v: float(np.sum(T.maxpool2x2(v)[0] * probe_p)),
                         xp)).max() < 1e-4

    xl = rng.standard_normal((3, 4))
    wl = rng.standard_normal((4, 2))
    bl = rng.standard_normal(2)
    probe_l = rng.standard_normal((3, 2))
    _, cache = T.linear(xl, wl, bl)
    gxl, gwl, gbl = T.linear_backward(cache, probe_l)
    assert rel_error(gxl, T.finite_difference_gradient(
        lambda v: float(np.sum(T.linear(v, wl, bl)[0] * probe_l)), xl)).max() < 1e-4

    logits = rng.standard_normal((4, 3))
    labels = rng.integers(0, 3, 4)
    _, _, grad = T.softmax_cross_entropy(logits, labels)
    assert rel_error(grad, T.finite_difference_gradient(
        lambda v: T.softmax_cross_entropy(v, labels)[0], logits)).max() < 1e-4

    # full graphs at toy size: input 1x3x8x8, filter counts [2,2,2,2,K]
    x = rng.random((1, 3, 8, 8))
    y = np.array([1])
    toy = dict(input_shape=(3, 8, 8), n_classes=3, conv5_filters=3, fc_hidden=8,
               base_filters=(2, 2, 2, 2))
    v1 = build_network(NetworkSpec("V1", **toy, seed=41))
    worst_v1 = _check_all_param_gradients(v1, x, y)
    v8 = build_network(NetworkSpec("V8", n_streams=2,
                                   slice_spec=make_slice_spec(2), **toy, seed=42))
    worst_v8 = _check_all_param_gradients(v8, x, y)
    print(f"criterion 1: worst relative error V1 {worst_v1:.2e}, V8 {worst_v8:.2e}")


# ---------------------------------------------------------------------------
# Criterion 2: slice reconstruction over 10,000 random images
# ---------------------------------------------------------------------------

def test_criterion_2_slice_reconstruction():
    rng = np.random.default_rng(202)
    images = rng.random((10_000, 3, 8, 8))
    images[0, 0, 0, 0] = 1.0  # include the upper boundary value
    for n_slices in (1, 5, 10):
        spec = make_slice_spec(n_slices)
        total = np.zeros_like(images)
        membership = np.zeros(images.shape, dtype=np.uint8)
        for s in slice_image(images, spec):
            total += s
            membership += (s != 0.0)
        assert np.array_equal(total, images), f"{n_slices} slices: sum differs"
        assert membership.max() <= 1, f"{n_slices} slices: overlapping membership"
    print("criterion 2: bit-exact reconstruction for slice counts 1, 5, 10")


# ---------------------------------------------------------------------------
# Criterion 3: noise protocol exactness and reproducibility
# ---------------------------------------------------------------------------

def test_criterion_3_noise_protocol():
    for size in (16, 32, 64):
        for tenths in range(1, 10):
            ratio = tenths / 10
            mask_a = corruption_mask(size, size, ratio, Xorshift64Star(size + tenths))
            mask_b = corruption_mask(size, size, ratio, Xorshift64Star(size + tenths))
            assert int(mask_a.sum()) == noise_count(ratio, size, size)
            assert np.array_equal(mask_a, mask_b)
    print("criterion 3: exact zeroed counts and seed-reproducible masks")


# ---------------------------------------------------------------------------
# Criterion 4: Adam against the scripted oracle, both beta configurations
# ---------------------------------------------------------------------------

class _Bag:
    def __init__(self, arrays):
        from streamnet.networks import ParamTensor
        self.params = {k: ParamTensor(k, np.asarray(v, dtype=np.float64))
                       for k, v in arrays.items()}


def _adam_vs_oracle(theta0, grad_of, betas, lr=0.05, steps=100):
    beta1, beta2 = betas
    bag = _Bag({"w": theta0})
    opt = Adam(bag, lr=lr, beta1=beta1, beta2=beta2)
    ref = np.array(theta0, dtype=np.float64)
    m = np.zeros_like(ref)
    v = np.zeros_like(ref)
    for t in range(1, steps + 1):
        g = grad_of(bag.params["w"].value)
        bag.params["w"].grad = g.copy()
        opt.step(bag)
        g_ref = grad_of(ref)
        m = beta1 * m + (1 - beta1) * g_ref
        v = beta2 * v + (1 - beta2) * g_ref ** 2
        ref = ref - lr * (m / (1 - beta1 ** t)) / (np.sqrt(v / (1 - beta2 ** t)) + 1e-8)
        assert np.abs(bag.params["w"].value - ref).max() < 1e-12, f"step {t}"


def test_criterion_4_adam_oracle():
    for betas in ((0.99, 0.9), (0.9, 0.999)):
        _adam_vs_oracle(np.array([1.0]), lambda th: 2.0 * th, betas)
        scales = np.array([1.0, 2.0, 0.5])
        _adam_vs_oracle(np.array([1.0, -0.5, 2.0]),
                        lambda th: 2.0 * scales * th, betas)
    print("criterion 4: 100-step trajectories match the oracle to 1e-12, "
          "both beta configurations")


# ---------------------------------------------------------------------------
# Criteria 5-7: the desk-scale sweep
# ---------------------------------------------------------------------------

def test_criterion_5_desk_robustness_ordering(desk_sweep):
    v8 = _seed_mean(desk_sweep, "V8-5")
    v1 = _seed_mean(desk_sweep, "V1")
    lines = [f"criterion 5: seed-mean noisy@{DESK_RATIO}: "
             f"V8-5 {v8:.3f}, V1 {v1:.3f}"]
    assert v8 >= v1 + 0.05, f"V8-5 {v8:.3f} not >= V1 {v1:.3f} + 5 points"
    for other in ("V5", "V6", "V7"):
        acc = _seed_mean(desk_sweep, other)
        lines.append(f"  {other} {acc:.3f}")
        assert v8 >= acc - 0.01, f"V8-5 {v8:.3f} below {other} {acc:.3f} - 1 point"
    print("\n".join(lines))


def test_criterion_6_desk_more_streams_help(desk_sweep):
    report = ["criterion 6: final-window noisy accuracy, V8-10 vs V8-5"]
    for r in EXTRA_RATIOS:
        ten = float(np.mean([desk_sweep[("V8-10", s)]["extra"][r]
                             for s in DESK_SEEDS]))
        five = float(np.mean([desk_sweep[("V8-5", s)]["extra"][r]
                              for s in DESK_SEEDS]))
        strictly = "strictly better" if ten > five else "not strictly better"
        report.append(f"  ratio {r}: V8-10 {ten:.3f} vs V8-5 {five:.3f} ({strictly})")
        assert ten >= five - 0.01, \
            f"ratio {r}: V8-10 {ten:.3f} below V8-5 {five:.3f} - 1 point"
    print("\n".join(report))


def test_criterion_7_desk_kl_ordering(desk_sweep):
    # Encodes the qualitative expectation that more streams leave the pooled
    # first-layer weights closer to uniform. At this scale the measured
    # ordering comes out inverted for a systematic reason (streams saturate
    # first, freeze near their uniform init, and then pay the shared-range
    # penalty against the wider-drifting single stream), so this test is
    # expected to fail; it asserts the expectation, not the measurement.
    ordered_seeds = 0
    lines = ["criterion 7: pooled-channel KL vs uniform (B=50, alpha=1)"]
    for seed in DESK_SEEDS:
        nets = []
        for arch in ("V1", "V8-5", "V8-10"):
            net, _, _ = data_io.load_checkpoint(
                desk_sweep[(arch, seed)]["checkpoint"])
            nets.append((arch, net))
        report = analysis.diversity_report(nets, bins=50, alpha=1.0,
                                           per_stream=False)
        kl = {arch: report.lookup(arch, "all") for arch, _ in nets}
        ordered = kl["V1"] > kl["V8-5"] > kl["V8-10"]
        ordered_seeds += int(ordered)
        lines.append(f"  seed {seed}: V1 {kl['V1']:.4f} > V8-5 {kl['V8-5']:.4f} "
                     f"> V8-10 {kl['V8-10']:.4f}: {ordered}")
    print("\n".join(lines))
    assert ordered_seeds >= 2, f"KL ordering held for only {ordered_seeds}/3 seeds"


# ---------------------------------------------------------------------------
# Criterion 8: KL analytics
# ---------------------------------------------------------------------------

def test_criterion_8_kl_analytics():
    uniform = Histogram(tuple(np.linspace(-1, 1, 51)), (100,) * 50)
    assert kl_divergence(uniform, smoothing=1.0) < 1e-12
    delta = Histogram(tuple(np.linspace(-1, 1, 51)), (10 ** 7,) + (0,) * 49)
    assert abs(kl_divergence(delta, smoothing=1e-7) - np.log(50)) < 1e-3
    print("criterion 8: uniform KL < 1e-12; single-bin delta -> ln(50)")


# ---------------------------------------------------------------------------
# Criterion 9: determinism and persistence at toy scale
# ---------------------------------------------------------------------------

def test_criterion_9_determinism_and_persistence(tmp_path):
    train_set, test_set = generate_synthetic(SyntheticSpec(
        n_classes=3, train_per_class=8, test_per_class=4, size=8, seed=5))
    spec = NetworkSpec("V8", (3, 8, 8), 3, n_streams=2,
                       slice_spec=make_slice_spec(2), conv5_filters=3,
                       fc_hidden=8, base_filters=(2, 2, 2, 2), seed=1)
    config = ExperimentConfig(network=spec, noise_ratio=0.5, epochs=4, seed=1,
                              batch_size=8, dataset="toy", lr=1e-3,
                              beta1=0.9, beta2=0.999)

    # identical config+seed -> byte-identical logs
    net_a, opt_a, log_a = train(config, train_set, test_set)
    net_b, _, log_b = train(config, train_set, test_set)
    assert log_a.canonical_bytes() == log_b.canonical_bytes()
    for pid in net_a.params:
        assert np.array_equal(net_a.params[pid].value, net_b.params[pid].value)

    # checkpoint round trip is bit-exact
    path = str(tmp_path / "final.ckpt")
    data_io.save_checkpoint(path, net_a, opt_a, extra={"epoch": 4})
    loaded, opt_loaded, _ = data_io.load_checkpoint(path)
    for pid in net_a.params:
        assert np.array_equal(loaded.params[pid].value, net_a.params[pid].value)
    for pid in opt_a.m:
        assert np.array_equal(opt_loaded.m[pid], opt_a.m[pid])
        assert np.array_equal(opt_loaded.v[pid], opt_a.v[pid])

    # resumed training reproduces the uninterrupted log
    import dataclasses
    half = dataclasses.replace(config, epochs=2)
    summary = run_cell(half, train_set, test_set, str(tmp_path / "half"))
    _, _, resumed = train(config, train_set, test_set,
                          resume_from=summary["checkpoint"])
    assert resumed.canonical_bytes() == log_a.canonical_bytes()
    print("criterion 9: byte-identical logs, bit-exact checkpoints, "
          "resume reproduces the uninterrupted run")
