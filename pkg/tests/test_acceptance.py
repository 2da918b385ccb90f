"""Release acceptance suite: one test per gate, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines as they
complete. Every check here recomputes its expectation from an independent
oracle (loops, brute force, closed form) rather than trusting library code,
and each gate enforces its wall-clock budget.
"""

import contextlib
import json
import time

import numpy as np
from fastapi.testclient import TestClient

from vitreoforge import diffusion as df
from vitreoforge.averaging import arithmetic_average, detect_artifact, weighted_average
from vitreoforge.denoiser import layers as ly
from vitreoforge.denoiser.model import ModelConfig, ResBlock, UNet
from vitreoforge.denoiser.training import (
    TrainConfig,
    cddpm_denoiser,
    train_cddpm,
    train_regression_baseline,
)
from vitreoforge.evalstats import (
    RANK_LABELS,
    AnatomyResponse,
    RankingResponse,
    SpotResponse,
    compute_statistics,
    correlation_matrix,
    fool_rate,
    holm_adjust,
    mean_rank,
    preservation,
    read_log,
)
from vitreoforge.imagecore import save_image
from vitreoforge.metrics import mse, psnr, ssim
from vitreoforge.phantom import PhantomSpec, generate_art_series
from vitreoforge.turing import STRUCTURE_IDS, create_app, create_manifest


@contextlib.contextmanager
def gate(name, budget_s):
    t0 = time.time()
    try:
        yield
    except BaseException:
        print(f"\n{name}: FAIL ({time.time() - t0:.1f}s)")
        raise
    dt = time.time() - t0
    assert dt < budget_s, f"{name}: exceeded {budget_s}s budget ({dt:.1f}s)"
    print(f"\n{name}: PASS ({dt:.1f}s)")


# ---- 1. diffusion algebra -------------------------------------------------------


def test_gate_1_diffusion_algebra():
    with gate("1 diffusion algebra", 60):
        sched = df.linear_beta_schedule(1000)
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(1000):
            x0 = rng.standard_normal((8, 8)).astype(np.float32)
            eps = rng.standard_normal((8, 8)).astype(np.float32)
            t = int(rng.integers(1, sched.T + 1))
            x_t = df.forward_sample(x0, t, eps, sched)
            v = df.velocity_target(x0, eps, t, sched)
            x0_hat, eps_hat = df.recover_from_v(x_t, v, t, sched)
            worst = max(worst,
                        float(np.max(np.abs(x0_hat - x0))),
                        float(np.max(np.abs(eps_hat - eps))))
        assert worst <= 1e-6, f"round-trip error {worst}"

        b = df.BridgeSchedule(T=1000)
        lx0 = rng.standard_normal((16, 16))
        ly_ = rng.standard_normal((16, 16))
        eps = rng.standard_normal((16, 16))
        assert np.array_equal(df.bridge_forward(lx0, ly_, 0, b, eps), lx0)
        assert np.array_equal(df.bridge_forward(lx0, ly_, b.T, b, eps), ly_)

        # pinned at both ends, the spread peaks mid-bridge at variance 1/2
        zeros = np.zeros(10_000)
        draws = df.bridge_forward(
            zeros, zeros, b.T // 2, b, rng.standard_normal(10_000))
        var = float(np.var(draws))
        assert abs(var - 0.5) <= 0.025, f"midpoint variance {var}"


# ---- 2. oracle samplers ---------------------------------------------------------


def test_gate_2_oracle_samplers():
    with gate("2 oracle samplers", 300):
        rng = np.random.default_rng(1)
        x0 = rng.random((64, 64))
        sched = df.linear_beta_schedule(1000, sigma_mode="beta")
        silent = df.NoiseSchedule(
            beta=sched.beta, alpha=sched.alpha, alpha_bar=sched.alpha_bar,
            sigma=np.zeros_like(sched.sigma), sigma_mode="beta")

        def exact_velocity(stack, t):
            ab = sched.alpha_bar[t - 1]
            eps = (stack[:, 0] - np.sqrt(ab) * x0) / np.sqrt(1.0 - ab)
            return np.sqrt(ab) * eps - np.sqrt(1.0 - ab) * x0

        out = df.cddpm_sample(exact_velocity, x0, silent, seed=5)
        err = float(np.max(np.abs(out - x0)))
        assert err <= 1e-4, f"ancestral chain error {err}"

        b = df.BridgeSchedule(T=1000)
        lx0 = rng.standard_normal((64, 64))
        ly_ = rng.standard_normal((64, 64))
        for n_steps in (10, 200, 1000):
            out = df.bbdm_sample(lambda x, t: x - lx0, ly_, b, n_steps)
            err = float(np.max(np.abs(out - lx0)))
            assert err <= 1e-6, f"bridge error {err} at {n_steps} steps"


# ---- 3. averaging ---------------------------------------------------------------


def test_gate_3_averaging():
    with gate("3 averaging", 120):
        rng = np.random.default_rng(2)
        for _ in range(100):
            n = int(rng.integers(2, 11))
            frames = [rng.random((8, 8)) for _ in range(n)]
            masks = [rng.random((8, 8)) < 0.3 for _ in range(n)]
            got, coverage = weighted_average(frames, masks)
            for i in range(8):
                for j in range(8):
                    vals = [f[i, j] for f, m in zip(frames, masks)
                            if not m[i, j]]
                    want = (sum(vals) / len(vals) if vals
                            else sum(f[i, j] for f in frames) / n)
                    assert abs(got[i, j] - want) <= 1e-12
                    assert coverage[i, j] == len(vals)

        scores = []
        for trial in range(50):
            r0 = int(rng.integers(4, 48))
            rows = int(rng.integers(4, 12))
            spec = PhantomSpec(height=64, width=64, seed=3000 + trial,
                               artifact_strips=((r0, r0 + rows, 0),))
            _, frames = generate_art_series(spec, 1)
            truth = np.zeros((64, 64), dtype=bool)
            truth[r0:r0 + rows] = True
            pred = detect_artifact(frames[0])
            scores.append((pred & truth).sum() / (pred | truth).sum())
        assert float(np.mean(scores)) >= 0.9, scores

        # averaging 10 unbiased-noise frames divides the error power by 10
        gains = []
        for _ in range(100):
            clean = rng.uniform(0.2, 0.8, (64, 64))
            frames = [clean + 0.05 * rng.standard_normal(clean.shape)
                      for _ in range(10)]
            avg = arithmetic_average(frames)
            gains.append(psnr(np.clip(avg, 0, 1), clean)
                         - psnr(np.clip(frames[0], 0, 1), clean))
        gain = float(np.mean(gains))
        assert abs(gain - 10.0) <= 0.5, f"PSNR gain {gain}"


# ---- 4. metric oracles ----------------------------------------------------------


def _loop_mse(a, b):
    total = 0.0
    h, w = a.shape
    for i in range(h):
        for j in range(w):
            d = float(a[i, j]) - float(b[i, j])
            total += d * d
    return total / (h * w)


def _loop_ssim(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03):
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    half = window // 2
    ax = np.arange(window) - half
    g1 = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    g1 /= g1.sum()
    wgt = np.outer(g1, g1)
    c1, c2 = k1 ** 2, k2 ** 2
    h, w = a.shape
    vals = []
    for i in range(half, h - half):
        for j in range(half, w - half):
            pa = a[i - half:i + half + 1, j - half:j + half + 1]
            pb = b[i - half:i + half + 1, j - half:j + half + 1]
            mu_a = (wgt * pa).sum()
            mu_b = (wgt * pb).sum()
            va = (wgt * pa * pa).sum() - mu_a ** 2
            vb = (wgt * pb * pb).sum() - mu_b ** 2
            cov = (wgt * pa * pb).sum() - mu_a * mu_b
            vals.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                        / ((mu_a ** 2 + mu_b ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def _loop_pearson(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / (sxx * syy) ** 0.5


def test_gate_4_metric_oracles():
    with gate("4 metric oracles", 60):
        rng = np.random.default_rng(3)
        for k in range(200):
            h = int(rng.integers(11, 17))
            w = int(rng.integers(11, 17))
            a = rng.random((h, w)).astype(np.float32)
            bb = rng.random((h, w)).astype(np.float32)
            assert abs(mse(a, bb) - _loop_mse(a, bb)) <= 1e-9
            assert abs(ssim(a, bb) - _loop_ssim(a, bb)) <= 1e-9
            if k < 50:
                x = rng.standard_normal(20)
                y = x * 0.5 + rng.standard_normal(20)
                got = correlation_matrix({"x": x, "y": y}).matrix[0, 1]
                assert abs(got - _loop_pearson(list(x), list(y))) <= 1e-9

        a = np.zeros((16, 16))
        bb = np.full((16, 16), 0.1)
        assert abs(psnr(a, bb) - 20.0) <= 1e-9  # mse 0.01 at peak 1.0


# ---- 5. reader statistics -------------------------------------------------------


def test_gate_5_reader_statistics():
    with gate("5 reader statistics", 60):
        assert holm_adjust([0.01, 0.04]) == [0.02, 0.04]
        assert holm_adjust([0.04, 0.01]) == [0.04, 0.02]

        spots = [SpotResponse("g", f"q{i}", "real" if i >= 23 else "generated",
                              i >= 23) for i in range(70)]
        assert round(fool_rate(spots), 1) == 32.9

        rng = np.random.default_rng(4)
        for _ in range(1000):
            responses = []
            for r in range(int(rng.integers(1, 5))):
                perm = rng.permutation(6) + 1
                responses.append(RankingResponse(
                    f"g{r}", "q0", dict(zip(RANK_LABELS, map(int, perm)))))
            stats = mean_rank(responses, n_boot=10)
            total = sum(s.mean for s in stats.values())
            assert abs(total - 21.0) <= 1e-9

        answers = [AnatomyResponse("g", "q0", STRUCTURE_IDS[i], ans)
                   for i, ans in enumerate(("Yes", "NotPresent", "No"))]
        assert round(preservation(answers), 1) == 66.7


# ---- 6. denoiser gradients ------------------------------------------------------


def _numeric_grad(loss_fn, arr, eps=1e-6):
    g = np.zeros_like(arr)
    flat = arr.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = loss_fn()
        flat[i] = old - eps
        fm = loss_fn()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def _assert_grads_close(a, b, what, rtol=1e-3, atol=1e-5):
    """Relative check, with a small absolute floor.

    Where the true derivative is (near) zero, both sides are dominated by
    finite-difference roundoff, so a pure ratio test tells us nothing; the
    floor sits well below any real gradient yet above that noise.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    gap = np.abs(a - b)
    allowed = np.maximum(rtol * (np.abs(a) + np.abs(b)), atol)
    worst = float(np.max(gap / allowed))
    assert worst <= 1.0, f"{what}: gradient mismatch (worst ratio {worst})"


def _check_gradients(module, x, forward, name):
    rng = np.random.default_rng(42)
    proj = rng.standard_normal(forward(x).shape)

    def loss():
        return float(np.sum(forward(x) * proj))

    module.zero_grad()
    forward(x)
    dx = module.backward(proj.copy())
    _assert_grads_close(dx, _numeric_grad(loss, x), f"{name} input")
    for pname, p, gr in zip(module.parameter_names(), module.parameters(),
                            module.gradients()):
        _assert_grads_close(gr, _numeric_grad(loss, p), f"{name}.{pname}")


def test_gate_6_denoiser_gradients():
    with gate("6 denoiser gradients", 300):
        rng = np.random.default_rng(5)
        f64 = dict(dtype=np.float64)
        x = rng.standard_normal((2, 3, 8, 8))

        conv = ly.Conv2d(3, 4, 3, rng=rng, **f64)
        _check_gradients(conv, x.copy(),
                         lambda a: conv.forward(a, train=True), "Conv2d")

        lin = ly.Linear(8, 5, rng=rng, **f64)
        xl = rng.standard_normal((4, 8))
        _check_gradients(lin, xl, lambda a: lin.forward(a, train=True),
                         "Linear")

        gn = ly.GroupNorm(4, groups=2, **f64)
        xg = rng.standard_normal((2, 4, 8, 8))
        _check_gradients(gn, xg, lambda a: gn.forward(a, train=True),
                         "GroupNorm")

        silu = ly.SiLU()
        _check_gradients(silu, x.copy(),
                         lambda a: silu.forward(a, train=True), "SiLU")

        drop = ly.Dropout(0.4)
        _check_gradients(
            drop, x.copy(),
            lambda a: drop.forward(a, train=True,
                                   rng=np.random.default_rng(123)),
            "Dropout")

        pool = ly.AvgPool2()
        _check_gradients(pool, x.copy(),
                         lambda a: pool.forward(a, train=True), "AvgPool2")

        up = ly.NearestUp2()
        _check_gradients(up, x.copy(),
                         lambda a: up.forward(a, train=True), "NearestUp2")

        attn = ly.SelfAttention(4, groups=2, rng=rng, **f64)
        attn.proj._params["w"][:] = rng.standard_normal(attn.proj.w.shape) * 0.3
        _check_gradients(attn, xg.copy(),
                         lambda a: attn.forward(a, train=True), "SelfAttention")

        res = ResBlock(3, 4, temb_dim=6, groups=2, dropout=0.0, rng=rng, **f64)
        temb = rng.standard_normal((2, 6))
        rproj = rng.standard_normal((2, 4, 8, 8))

        def res_loss():
            return float(np.sum(res.forward(x, temb, train=True) * rproj))

        res.zero_grad()
        res.forward(x, temb, train=True)
        dx, dtemb = res.backward(rproj.copy())
        _assert_grads_close(dx, _numeric_grad(res_loss, x), "ResBlock input")
        _assert_grads_close(dtemb, _numeric_grad(res_loss, temb),
                            "ResBlock timestep")
        for pname, p, gr in zip(res.parameter_names(), res.parameters(),
                                res.gradients()):
            _assert_grads_close(gr, _numeric_grad(res_loss, p),
                                f"ResBlock.{pname}")

        cfg = ModelConfig(in_channels=2, base=4, multipliers=(1, 2),
                          res_blocks=1, groups=4, dropout=0.0,
                          attention=(False, True))
        net = UNet(cfg, seed=0, dtype=np.float64)
        xn = rng.standard_normal((1, 2, 8, 8))
        proj = rng.standard_normal((1, 1, 8, 8))

        def net_loss():
            return float(np.sum(net.forward(xn, 3, train=True) * proj))

        net.zero_grad()
        net.forward(xn, 3, train=True)
        dx = net.backward(proj.copy())
        _assert_grads_close(dx, _numeric_grad(net_loss, xn),
                            "assembled network input")


# ---- 7. toy end-to-end ----------------------------------------------------------


def _toy_dataset(n_locations, seed):
    rng = np.random.default_rng(seed)
    ys, targets, cleans, singles = [], [], [], []
    for _ in range(n_locations):
        b0 = int(rng.integers(18, 23))
        b1 = int(rng.integers(42, 47))
        refl = (0.08 + rng.uniform(-0.03, 0.03),
                0.65 + rng.uniform(-0.05, 0.05),
                0.35 + rng.uniform(-0.05, 0.05))
        spec = PhantomSpec(height=64, width=64, layer_boundaries=(b0, b1),
                           layer_reflectivities=refl, boundary_jitter=1.5,
                           speckle_looks=1.0, seed=int(rng.integers(1 << 30)))
        clean, frames = generate_art_series(spec, 100)
        stack = np.stack(frames)
        ys.append(stack[:10].mean(axis=0).astype(np.float32))
        targets.append(stack.mean(axis=0).astype(np.float32))
        cleans.append(clean)
        singles.append(frames[0])
    return ys, targets, cleans, singles


def _mean_psnr(imgs, refs):
    return float(np.mean([psnr(np.asarray(a, np.float32), r)
                          for a, r in zip(imgs, refs)]))


def test_gate_7_toy_end_to_end():
    with gate("7 toy end-to-end", 1800):
        ys, targets, cleans, singles = _toy_dataset(220, seed=42)
        train_pairs = list(zip(ys[:200], targets[:200]))
        held_y = np.stack(ys[200:])
        held_clean = cleans[200:]
        held_single = np.stack(singles[200:])

        sched = df.linear_beta_schedule(200, 5e-4, 0.1, sigma_mode="posterior")
        mc = ModelConfig(in_channels=2, base=8, multipliers=(1, 2),
                         res_blocks=1, groups=4, dropout=0.0)
        tc = TrainConfig(learning_rate=1e-3, weight_decay=0.01, dropout=0.0,
                         ema_decay=0.999, steps=5000, batch_size=4, seed=0)
        res = train_cddpm(train_pairs, sched, tc, model_cfg=mc)
        out = df.cddpm_sample(cddpm_denoiser(res.ema_model), held_y, sched,
                              seed=123)

        mc_reg = ModelConfig(in_channels=1, base=8, multipliers=(1, 2),
                             res_blocks=1, groups=4, dropout=0.0,
                             time_embedding=False)
        # EMA horizon must sit well inside the run: 0.999 over 1500 steps
        # leaves ~22% of the averaged weights at random init.
        tc_reg = TrainConfig(learning_rate=1e-3, weight_decay=0.01,
                             dropout=0.0, ema_decay=0.99, steps=1500,
                             batch_size=4, prediction="regression", seed=0)
        res_reg = train_regression_baseline(train_pairs, tc_reg,
                                            model_cfg=mc_reg)
        reg_out = np.clip(res_reg.ema_model.predict(held_y[:, None]),
                          0.0, 1.0)

        base_p = _mean_psnr(held_y, held_clean)
        cddpm_p = _mean_psnr(out, held_clean)
        reg_p = _mean_psnr(reg_out, held_clean)
        print(f"\n  input {base_p:.2f} dB, diffusion {cddpm_p:.2f} dB, "
              f"regression {reg_p:.2f} dB")
        assert cddpm_p >= base_p + 1.0, (base_p, cddpm_p)
        assert reg_p >= base_p + 1.0, (base_p, reg_p)

        # the model trained on 10-frame averages still helps single frames
        out1 = df.cddpm_sample(cddpm_denoiser(res.ema_model), held_single,
                               sched, seed=456)
        single_p = _mean_psnr(held_single, held_clean)
        enhanced_p = _mean_psnr(out1, held_clean)
        print(f"  single-frame input {single_p:.2f} dB, "
              f"enhanced {enhanced_p:.2f} dB")
        assert enhanced_p > single_p, (single_p, enhanced_p)


# ---- 8. service replay ----------------------------------------------------------


def _study_dir(tmp_path, n_locations=10):
    rng = np.random.default_rng(6)
    root = tmp_path / "study"
    out = []
    from vitreoforge.turing import LocationImages
    for i in range(n_locations):
        d = root / f"loc_{i}"
        d.mkdir(parents=True)
        paths = {}
        for name in (["reference", "real", "generated"]
                     + [f"cand_{lab}" for lab in RANK_LABELS]):
            p = d / f"{name}.octf"
            save_image(rng.random((16, 16), dtype=np.float32), p)
            paths[name] = str(p)
        out.append(LocationImages(
            location_id=f"loc_{i}",
            reference=paths["reference"],
            real=paths["real"],
            generated=paths["generated"],
            candidates={lab: paths[f"cand_{lab}"] for lab in RANK_LABELS}))
    return out


def _answer_body(kind, question, rng):
    if kind == "rank6":
        return {"ranks": [int(r) for r in rng.permutation(6) + 1]}
    if kind == "spot":
        return {"chosen_slot": int(rng.integers(0, 2))}
    return {"answers": [
        {"structure_id": s["structure_id"],
         "answer": ("Yes", "No", "NotPresent")[int(rng.integers(0, 3))]}
        for s in question["structures"]]}


def test_gate_8_service_replay(tmp_path):
    with gate("8 service replay", 60):
        locations = _study_dir(tmp_path)
        rng = np.random.default_rng(7)
        for kind in ("rank6", "spot", "anatomy"):
            man = create_manifest(locations, kind, 10, seed=11)
            log = tmp_path / f"{kind}.jsonl"
            client = TestClient(create_app(man, log, results_seed=3,
                                           n_boot=2000))
            for g in range(7):
                sid = client.post("/v1/sessions", json={
                    "grader_id": f"grader_{g}",
                    "years_experience": int(rng.integers(1, 20)),
                }).json()["session_id"]
                for _ in range(10):
                    q = client.get(f"/v1/sessions/{sid}/question").json()
                    body = {"question_id": q["question_id"]}
                    body.update(_answer_body(kind, q, rng))
                    r = client.post(f"/v1/sessions/{sid}/answers", json=body)
                    assert r.status_code == 200
            served = client.get(f"/v1/results/{kind}").json()
            offline = compute_statistics(read_log(log), kind, seed=3,
                                         n_boot=2000)
            assert served == json.loads(json.dumps(offline)), kind
