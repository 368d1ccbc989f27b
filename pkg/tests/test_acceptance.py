"""Acceptance suite: one test per criterion, each recording a pass/fail line.

Criteria 4, 5 and 6 share one canonical overfit run (module fixture). On a
single core the whole file takes roughly 45 minutes.
"""

import re
import subprocess
import sys
import textwrap
import time

import numpy as np
import pytest

from leansplat import adcore as ad
from leansplat.adcore import Array
from leansplat.adcore.gradcheck import analytic_grads, check_gradients, numeric_grad, relative_error
from leansplat.camera import Camera
from leansplat.data import SceneSpec, generate_scene, make_rig
from leansplat.decoder import DecoderConfig, LeanGaussian, ModelConfig
from leansplat.features import FeatureConfig
from leansplat.gaussians import PhysicalGaussians, activate, compose_update, covariance_np, grid_rays, sh_color
from leansplat.metrics import far_views, psnr, ssim, ssim_value
from leansplat.render import RenderSettings, Splat2D, composite_pixel, render, render_oracle
from leansplat.training import TrainConfig, Trainer, loss, overfit_config

# overfit harness
SCENE = SceneSpec(seed=0, n_gaussians=32, n_views=25, resolution=64)
HELD_OUT = [2, 7, 12, 17, 22]
TRAIN = [i for i in range(SCENE.n_views) if i not in HELD_OUT]
INPUT_VIEW = 0
EVAL_EVERY = 250
MAX_ITERS = 5000
HELD_OUT_TARGET = 25.0
INPUT_TARGET = 30.0
# ablations use a shortened schedule (see README)
ABLATION_ITERS = 500
ABLATION_SEEDS = (0, 1, 2)
# "at best matches" for the frozen-reference ablation
MATCH_DB = 0.25


def clipped_psnr(img, ref):
    return psnr(np.clip(img, 0.0, 1.0), ref)


def evaluate(trainer, obj):
    g = trainer.predict(obj.images[INPUT_VIEW], obj.cameras[INPUT_VIEW])
    held = float(np.mean([clipped_psnr(render(g, obj.cameras[i]).rgb.data, obj.images[i]) for i in HELD_OUT]))
    inp = clipped_psnr(render(g, obj.cameras[INPUT_VIEW]).rgb.data, obj.images[INPUT_VIEW])
    return held, inp


@pytest.fixture(scope="module")
def harness_scene():
    return generate_scene(SCENE)[1]


@pytest.fixture(scope="module")
def overfit(harness_scene):
    """Canonical run; stops at the first evaluation meeting both targets."""
    obj = harness_scene
    ad.set_default_dtype(np.float64)
    tr = Trainer(overfit_config(iters=MAX_ITERS, seed=0), [obj], train_indices=TRAIN)
    history = {}
    t0 = time.perf_counter()
    while tr.iteration < MAX_ITERS:
        tr.run(EVAL_EVERY)
        history[tr.iteration] = evaluate(tr, obj)
        held, inp = history[tr.iteration]
        if tr.iteration >= ABLATION_ITERS and held >= HELD_OUT_TARGET and inp >= INPUT_TARGET:
            break
    return {"trainer": tr, "history": history, "seconds": time.perf_counter() - t0}


# ----------------------------------------------------------------------
# 1. gradient integrity
# ----------------------------------------------------------------------

def _v(rng, *shape, lo=-1.0, hi=1.0):
    return Array(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _away_from(x, points, gap=0.05):
    # nudge entries off kinks so central differences stay on one side
    for p in points:
        near = np.abs(x.data - p) < gap
        x.data[near] += 2 * gap
    return x


def primitive_checks(rng):
    w = rng.normal(size=(4, 5))
    wr = lambda y: ad.mean(y * Array(np.resize(w, y.shape)))  # noqa: E731
    a, b = _v(rng, 4, 5), _v(rng, 4, 5)
    pos = _v(rng, 4, 5, lo=0.3, hi=2.0)
    row = _v(rng, 1, 5)
    kink = _away_from(_v(rng, 4, 5), [0.0])
    kb = _away_from(_v(rng, 4, 5), [0.0])
    mx_b = Array(kink.data + np.where(rng.random((4, 5)) < 0.5, 0.3, -0.3), requires_grad=True)
    cl = _away_from(_v(rng, 4, 5), [-0.5, 0.5])
    m3 = _v(rng, 2, 3, 4)
    m4 = _v(rng, 2, 4, 3)
    img = _v(rng, 2, 7, 6)
    ker = _v(rng, 3, 2, 3, 3)
    gamma, beta = _v(rng, 5), _v(rng, 5)
    mask = rng.random((4, 5)) < 0.5
    idx = np.array([3, 0, 0, 2])
    return {
        "add": (lambda: wr(a + row), [a, row]),
        "sub": (lambda: wr(a - b), [a, b]),
        "mul": (lambda: wr(a * b), [a, b]),
        "div": (lambda: wr(a / pos), [a, pos]),
        "maximum": (lambda: wr(ad.maximum(kink, mx_b)), [kink, mx_b]),
        "neg": (lambda: wr(-a), [a]),
        "exp": (lambda: wr(ad.exp(a)), [a]),
        "log": (lambda: wr(ad.log(pos)), [pos]),
        "sqrt": (lambda: wr(ad.sqrt(pos)), [pos]),
        "power": (lambda: wr(ad.power(pos, 2.7)), [pos]),
        "sigmoid": (lambda: wr(ad.sigmoid(a)), [a]),
        "softplus": (lambda: wr(ad.softplus(a)), [a]),
        "tanh": (lambda: wr(ad.tanh(a)), [a]),
        "relu": (lambda: wr(ad.relu(kb)), [kb]),
        "gelu": (lambda: wr(ad.gelu(a)), [a]),
        "clamp": (lambda: wr(ad.clamp(cl, -0.5, 0.5)), [cl]),
        "sum": (lambda: wr(ad.sum_(m3, axis=1, keepdims=True) * 1.0) + ad.sum_(a * a), [m3, a]),
        "mean": (lambda: ad.mean(ad.mean(m3, axis=(0, 2)) * Array(w[0, :3])), [m3]),
        "cumsum": (lambda: wr(ad.cumsum(a, axis=1)), [a]),
        "reshape": (lambda: wr(ad.reshape(m3, (4, 6))[:, :5]), [m3]),
        "transpose": (lambda: wr(ad.transpose(m4, (1, 0, 2))[:, :, :2].sum(axis=1)), [m4]),
        "getitem": (lambda: wr(a[1:3, ::2]), [a]),
        "take": (lambda: wr(ad.take(a, idx, axis=0)), [a]),
        "concat": (lambda: wr(ad.concat([a, b], axis=1)), [a, b]),
        "stack": (lambda: wr(ad.stack([a, b], axis=0)), [a, b]),
        "where": (lambda: wr(ad.where(mask, a, b * b)), [a, b]),
        "matmul": (lambda: wr(ad.matmul(m3, m4)), [m3, m4]),
        "softmax": (lambda: wr(ad.softmax(a, axis=1)), [a]),
        "layer_norm": (lambda: wr(ad.layer_norm(a, gamma, beta)), [a, gamma, beta]),
        "pad2d": (lambda: wr(ad.pad2d(img, (1, 2, 0, 1))), [img]),
        "conv2d": (lambda: wr(ad.conv2d(img, ker, stride=2, padding=1)), [img, ker]),
        "upsample_bilinear": (lambda: wr(ad.upsample_bilinear(img, 11, 9)), [img]),
    }


def composite_checks(rng):
    out = {}
    fmap = _v(rng, 3, 6, 5)
    pts = Array(rng.uniform(-0.8, 5.8, size=(12, 2)), requires_grad=True)
    frac = pts.data - np.floor(pts.data)
    pts.data[:] = np.floor(pts.data) + np.clip(frac, 0.1, 0.9)
    wb = Array(rng.normal(size=(12, 3)))
    out["bilinear_sample"] = (lambda: ad.mean(ad.bilinear_sample(fmap, pts) * wb), [fmap, pts])

    sh = _v(rng, 6, 3, 4)
    dirs = rng.normal(size=(6, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    ws = Array(rng.normal(size=(6, 3)))
    out["sh_color"] = (lambda: ad.mean(sh_color(sh, dirs) * ws), [sh])

    raw = _v(rng, 9, 24, lo=-0.5, hi=0.5)
    delta = _v(rng, 9, 24, lo=-0.3, hi=0.3)
    rays = grid_rays(9, Camera(20.0, 20.0, 7.5, 7.5, 16, 16))

    def act():
        g = activate(compose_update(raw, delta), rays)
        return ad.mean(g.means * 0.7) + ad.mean(g.covs * 1.3) + ad.mean(g.opacities) + ad.mean(g.sh * 0.2)

    out["activate+compose"] = (act, [raw, delta])

    a = Array(rng.uniform(size=(3, 14, 13)), requires_grad=True)
    b = Array(rng.uniform(size=(3, 14, 13)), requires_grad=True)
    out["ssim"] = (lambda: ssim(a, b), [a, b])

    cam = Camera.look_at([0.0, -2.5, 0.5], fx=20.0, width=16, height=16)
    means = rng.normal(0, 0.3, size=(6, 3))
    covs = covariance_np(rng.uniform(0.05, 0.2, size=(6, 3)), rng.normal(size=(6, 4)))
    g = PhysicalGaussians.from_numpy(means, covs, rng.uniform(0.2, 0.9, 6), rng.normal(size=(6, 3, 4)),
                                     requires_grad=True)
    wr = Array(rng.normal(size=(3, 16, 16)))
    exact = RenderSettings().exact()
    params = [g.means, g.covs, g.opacities, g.sh]
    out["render"] = (lambda: ad.mean(render(g, cam, exact).rgb * wr), params)
    out["render_oracle"] = (lambda: ad.mean(render_oracle(g, cam, exact).rgb * wr), params)
    return out


def tiny_decoder(rng):
    f = 25.0
    cfg = ModelConfig(decoder=DecoderConfig(n_queries=16, hidden=16, layers=1, heads=2, ffn_mult=2),
                      features=FeatureConfig(channels=8, unet_base=4, scale=4),
                      intrinsics=(f, f, 7.5, 7.5, 16, 16), seed=3)
    model = LeanGaussian(cfg)
    # zero-initialized output layers would hide every upstream gradient
    for _, p in model.named_parameters():
        if p.data.ndim == 2 and not np.any(p.data):
            p.data[...] = rng.normal(0, 0.05, size=p.shape)
    return model


def decoder_check(rng):
    model = tiny_decoder(rng)
    cam_in = Camera.look_at([0.0, -2.0, 0.3], fx=25.0, width=16, height=16)
    cam_out = Camera.look_at([1.2, -1.6, 0.5], fx=25.0, width=16, height=16)
    img = Array(rng.random((3, 16, 16)))
    target = Array(rng.random((3, 16, 16)))
    cfg = TrainConfig(n_queries=16, hidden=16, layers=1, perc_start=0)
    exact = RenderSettings().exact()

    def fn():
        raws = model(img, cam_in)
        r_e = render(model.physical(raws[0], cam_in), cam_in, exact).rgb
        r_d = [render(model.physical(g, cam_in), cam_out, exact).rgb for g in raws[1:]]
        return loss(r_d, r_e, target, cfg, iteration=1, target_e=img)

    named = list(model.named_parameters())
    grads = analytic_grads(fn, [p for _, p in named])
    worst, worst_key = 0.0, ""
    for (key, p), g in zip(named, grads):
        flat = np.abs(g.reshape(-1))
        idx = np.unique(np.concatenate([np.argsort(flat)[-3:], rng.choice(p.size, min(3, p.size), replace=False)]))
        num = numeric_grad(fn, p, 1e-5, idx)
        err = relative_error(g.reshape(-1)[idx], num.reshape(-1)[idx])
        if err > worst:
            worst, worst_key = err, key
    return worst, worst_key, len(named)


def test_criterion_1_gradient_integrity(acceptance):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    prim = {k: check_gradients(fn, ps) for k, (fn, ps) in primitive_checks(rng).items()}
    comp = {k: check_gradients(fn, ps) for k, (fn, ps) in composite_checks(rng).items()}
    dec_err, dec_key, n_tensors = decoder_check(rng)
    secs = time.perf_counter() - t0
    worst_prim = max(prim, key=prim.get)
    worst_comp = max(comp, key=comp.get)
    ok = prim[worst_prim] < 1e-4 and comp[worst_comp] < 1e-3 and dec_err < 1e-3 and secs < 300
    acceptance(1, ok, f"{len(prim)} primitives worst {prim[worst_prim]:.2e} ({worst_prim}) < 1e-4; "
                      f"{len(comp)} composite ops worst {comp[worst_comp]:.2e} ({worst_comp}) < 1e-3; "
                      f"decoder {n_tensors} tensors worst {dec_err:.2e} ({dec_key}) < 1e-3; {secs:.0f} s")
    assert ok


# ----------------------------------------------------------------------
# 2. renderer oracle equivalence
# ----------------------------------------------------------------------

def test_criterion_2_oracle_equivalence(acceptance):
    t0 = time.perf_counter()
    worst_default, worst_exact = 0.0, 0.0
    exact = RenderSettings().exact()
    for seed in range(50):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 33))
        covs = covariance_np(rng.uniform(0.03, 0.25, size=(n, 3)), rng.normal(size=(n, 4)))
        g = PhysicalGaussians.from_numpy(rng.normal(0, 0.5, size=(n, 3)), covs, rng.uniform(0.05, 0.99, n),
                                         rng.normal(size=(n, 3, 4)))
        cam = Camera.look_at(rng.normal(size=3) * 0.3 + [0.0, -2.5, 0.4], fx=40.0, width=32, height=32)
        ref = render_oracle(g, cam).rgb.data
        worst_default = max(worst_default, np.abs(render(g, cam).rgb.data - ref).max())
        worst_exact = max(worst_exact, np.abs(render(g, cam, exact).rgb.data - ref).max())
    secs = time.perf_counter() - t0
    ok = worst_default < 1e-3 and worst_exact < 1e-6 and secs < 60
    acceptance(2, ok, f"50 scenes: max |render - oracle| {worst_default:.2e} < 1e-3 (default), "
                      f"{worst_exact:.2e} < 1e-6 (exact); {secs:.1f} s")
    assert ok


# ----------------------------------------------------------------------
# 3. compositing law
# ----------------------------------------------------------------------

def test_criterion_3_compositing_law(acceptance):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(200):
        sp = []
        for _ in range(3):
            a = rng.normal(size=(2, 2))
            sp.append(Splat2D(rng.uniform(-2, 2, 2), a @ a.T + 0.5 * np.eye(2), 1.0,
                              float(rng.uniform(0.05, 0.95)), rng.uniform(0, 1, 3), 10.0))
        p = rng.uniform(-2, 2, 2)
        al = []
        for s in sp:
            d = p - s.mean2d
            (a11, a12), (_, a22) = s.cov2d
            det = a11 * a22 - a12 * a12
            m = (a22 * d[0] ** 2 - 2 * a12 * d[0] * d[1] + a11 * d[1] ** 2) / det
            al.append(s.opacity * np.exp(-0.5 * m))
        expect = (sp[0].color * al[0] + sp[1].color * al[1] * (1 - al[0])
                  + sp[2].color * al[2] * (1 - al[0]) * (1 - al[1]))
        got, _ = composite_pixel(sp, p, alpha_max=1.0, early_stop=False)
        worst = max(worst, np.abs(got - expect).max())

    # alpha bound over 10^4 random pixels of dense random stacks
    alpha_max_seen = 0.0
    for _ in range(10_000):
        k = int(rng.integers(1, 8))
        stack = [Splat2D(rng.uniform(-1, 1, 2), np.eye(2) * rng.uniform(0.2, 2.0), 1.0,
                         float(rng.uniform(0.5, 1.0)), rng.uniform(0, 1, 3), 10.0) for _ in range(k)]
        _, a = composite_pixel(stack, rng.uniform(-1, 1, 2))
        alpha_max_seen = max(alpha_max_seen, a)

    # order-permutation invariance of the full renderer
    n = 24
    covs = covariance_np(rng.uniform(0.05, 0.2, size=(n, 3)), rng.normal(size=(n, 4)))
    g = PhysicalGaussians.from_numpy(rng.normal(0, 0.4, size=(n, 3)), covs, rng.uniform(0.2, 0.95, n),
                                     rng.normal(size=(n, 3, 4)))
    cam = Camera.look_at([0.2, -2.5, 0.4], fx=40.0, width=32, height=32)
    base = render(g, cam).rgb.data.tobytes()
    perm_ok = all(render(g.take(rng.permutation(n)), cam).rgb.data.tobytes() == base for _ in range(5))

    ok = worst < 1e-12 and alpha_max_seen <= 1.0 and perm_ok
    acceptance(3, ok, f"3-splat expansion max err {worst:.1e} < 1e-12; max alpha over 10^4 pixels "
                      f"{alpha_max_seen:.6f} <= 1; permutation bit-identical: {perm_ok}")
    assert ok


# ----------------------------------------------------------------------
# 4. overfit convergence
# ----------------------------------------------------------------------

def test_criterion_4_overfit_convergence(acceptance, overfit):
    it = max(overfit["history"])
    held, inp = overfit["history"][it]
    ok = held >= HELD_OUT_TARGET and inp >= INPUT_TARGET and it <= MAX_ITERS
    acceptance(4, ok, f"after {it} iterations ({overfit['seconds'] / 60:.1f} min): held-out PSNR {held:.2f} dB "
                      f"(>= {HELD_OUT_TARGET}), input-view PSNR {inp:.2f} dB (>= {INPUT_TARGET})")
    assert ok


# ----------------------------------------------------------------------
# 5. ablation directions
# ----------------------------------------------------------------------

ABLATIONS = {
    "single layer": dict(layers=1),
    "frozen refs": dict(refs="grid"),
    "no first-stage loss": dict(lambda_e=0.0),
}


def ablation_psnr(obj, seed, **over):
    ad.set_default_dtype(np.float64)
    tr = Trainer(overfit_config(iters=MAX_ITERS, seed=seed, **over), [obj], train_indices=TRAIN)
    tr.run(ABLATION_ITERS)
    return evaluate(tr, obj)[0]


def test_criterion_5_ablation_directions(acceptance, overfit, harness_scene):
    obj = harness_scene
    base = [overfit["history"][ABLATION_ITERS][0]] + [ablation_psnr(obj, s) for s in ABLATION_SEEDS[1:]]
    results = {name: [ablation_psnr(obj, s, **over) for s in ABLATION_SEEDS] for name, over in ABLATIONS.items()}
    b = float(np.mean(base))
    m = {k: float(np.mean(v)) for k, v in results.items()}
    dirs = {
        "single layer": m["single layer"] < b,
        "frozen refs": m["frozen refs"] <= b + MATCH_DB,
        "no first-stage loss": m["no first-stage loss"] < b,
    }
    ok = all(dirs.values())
    seeds = lambda v: "/".join(f"{x:.2f}" for x in v)  # noqa: E731
    detail = f"{ABLATION_ITERS} it x {len(ABLATION_SEEDS)} seeds, full {b:.2f} dB [{seeds(base)}]; " + "; ".join(
        f"{k} {m[k]:.2f} dB [{seeds(results[k])}] ({'ok' if dirs[k] else 'wrong direction'})" for k in ABLATIONS)
    acceptance(5, ok, detail)
    assert ok


# ----------------------------------------------------------------------
# 6. refinement monotonicity
# ----------------------------------------------------------------------

def test_criterion_6_refinement_monotonicity(acceptance, overfit, harness_scene):
    obj = harness_scene
    tr = overfit["trainer"]
    cam_in = obj.cameras[INPUT_VIEW]
    with ad.no_grad():
        raws = tr.model(Array(obj.images[INPUT_VIEW]), cam_in)
        first, last = tr.model.physical(raws[1], cam_in), tr.model.physical(raws[-1], cam_in)
        better = 0
        for i in TRAIN:
            l1 = np.mean((render(first, obj.cameras[i]).rgb.data - obj.images[i]) ** 2)
            ll = np.mean((render(last, obj.cameras[i]).rgb.data - obj.images[i]) ** 2)
            better += ll <= l1
    frac = better / len(TRAIN)
    ok = frac >= 0.9
    acceptance(6, ok, f"layer-{len(raws) - 1} loss <= layer-1 loss on {better}/{len(TRAIN)} training views "
                      f"({100 * frac:.0f}% >= 90%)")
    assert ok


# ----------------------------------------------------------------------
# 7. determinism and persistence
# ----------------------------------------------------------------------

TRACE_SCRIPT = textwrap.dedent("""
    import sys
    from leansplat.threads import set_threads
    set_threads(int(sys.argv[1]))
    from leansplat.data import SceneSpec, generate_scene
    from leansplat.training import Trainer, overfit_config
    _, obj = generate_scene(SceneSpec(seed=0, n_gaussians=32, n_views=25, resolution=64))
    tr = Trainer(overfit_config(seed=0), [obj], train_indices={train})
    for row in tr.run(50):
        print(repr(row["loss"]))
""")


def test_criterion_7_determinism_persistence(acceptance, harness_scene, tmp_path):
    script = TRACE_SCRIPT.format(train=TRAIN)
    traces = {}
    for n in (1, 4, 8):
        res = subprocess.run([sys.executable, "-c", script, str(n)], capture_output=True, text=True)
        assert res.returncode == 0, res.stderr
        traces[n] = res.stdout.split()
    same_threads = len(traces[1]) == 50 and traces[1] == traces[4] == traces[8]

    obj = harness_scene
    ad.set_default_dtype(np.float64)
    cfg = overfit_config(seed=0)
    full = Trainer(cfg, [obj], train_indices=TRAIN)
    full.run(10)
    part = Trainer(cfg, [obj], train_indices=TRAIN)
    part.run(5)
    part.save(tmp_path / "half.lgs")
    resumed = Trainer.load(tmp_path / "half.lgs", [obj])
    resumed.run(5)
    a, b = full.model.state_dict(), resumed.model.state_dict()
    same_resume = all(a[k].tobytes() == b[k].tobytes() for k in a)
    same_resume &= [r["loss"] for r in full.log[5:]] == [r["loss"] for r in resumed.log]
    # the loss trace from the in-process run matches the subprocess traces too
    same_inproc = [repr(r["loss"]) for r in full.log[:10]] == traces[1][:10]

    ok = same_threads and same_resume and same_inproc
    acceptance(7, ok, f"50-step loss traces identical for threads 1/4/8: {same_threads}; "
                      f"save/load/resume bit-exact vs unbroken run: {same_resume}; "
                      f"in-process trace matches: {same_inproc}")
    assert ok


# ----------------------------------------------------------------------
# 8. throughput report
# ----------------------------------------------------------------------

def test_criterion_8_throughput(acceptance):
    res = subprocess.run([sys.executable, "-m", "leansplat.cli", "bench", "--gaussians", "10000",
                          "--res", "128x128"], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    rec = float(re.search(r"reconstruction_ms=([0-9.eE+-]+|nan|inf)", res.stdout).group(1))
    ren = float(re.search(r"render_ms=([0-9.eE+-]+|nan|inf)", res.stdout).group(1))
    ok = np.isfinite(rec) and np.isfinite(ren) and ren < 250.0
    acceptance(8, ok, f"10000 Gaussians at 128x128: reconstruction {rec:.0f} ms (A100 reference 140 ms, "
                      f"not asserted), render {ren:.1f} ms < 250 ms (A100 reference 1.8 ms)")
    assert ok


# ----------------------------------------------------------------------
# 9. metric correctness
# ----------------------------------------------------------------------

def brute_far(cams, idx, thr=45.0):
    def ang(c):
        x, y, z = c.center
        return np.degrees(np.arctan2(y, x)), np.degrees(np.arcsin(z / np.linalg.norm(c.center)))

    a0, e0 = ang(cams[idx])
    out = []
    for i, c in enumerate(cams):
        a, e = ang(c)
        d = abs(a - a0) % 360
        if i != idx and (min(d, 360 - d) > thr or abs(e - e0) > thr):
            out.append(i)
    return out


def test_criterion_9_metric_correctness(acceptance):
    rng = np.random.default_rng(9)
    a = rng.uniform(0, 0.9, size=(3, 32, 32))
    p20 = psnr(a, a + 0.1)
    p_inf = psnr(a, a)
    s1 = ssim_value(a, a)
    far_ok = True
    for seed in range(10):
        cams = make_rig(SceneSpec(seed=seed, n_views=30, elev_min=-70, elev_max=80))
        for idx in range(0, 30, 7):
            far_ok &= far_views(cams, idx) == brute_far(cams, idx)
    ok = abs(p20 - 20.0) < 1e-9 and p_inf == float("inf") and s1 == 1.0 and far_ok
    acceptance(9, ok, f"PSNR(+0.1 offset) = {p20:.12f} dB; PSNR(a,a) = {p_inf}; ssim(a,a) = {s1}; "
                      f"far-view subsets match 45 deg brute force on 10 rigs: {far_ok}")
    assert ok
