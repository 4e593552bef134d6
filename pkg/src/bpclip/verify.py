"""Built-in invariant and oracle self-checks (the `verify` subcommand).

Every check returns (name, passed, detail). Oracles here are deliberately
independent scalar-loop implementations, not calls back into the fast
paths they validate.
"""

from __future__ import annotations

import time

import numpy as np

from . import archive, autograd as ag
from .attention import FusionBlock, MscaBlock, SaBlock, sdp_attention
from .autograd import Tensor
from .clip_head import ScoreHead, adjective_similarity, cosine_to_bank
from .errors import BpclipError
from .glp import GlpLevel
from .gradcheck import check_gradients
from .metrics import plcc, srcc
from .model import ModelConfig, QualityModel
from .backbone import BackboneConfig
from .train import cosine_lr, mse_loss

GRAD_TOL = 1e-6
FD_STEP = 1e-5


# -- independent oracles -------------------------------------------------------


def _loop_attention(q, k, v):
    b, lq, d = q.shape
    lk = k.shape[1]
    out = np.zeros((b, lq, d))
    for bi in range(b):
        for i in range(lq):
            scores = np.array([sum(q[bi, i, c] * k[bi, j, c] for c in range(d)) / np.sqrt(d)
                               for j in range(lk)])
            e = np.exp(scores - scores.max())
            p = e / e.sum()
            for c in range(d):
                out[bi, i, c] = sum(p[j] * v[bi, j, c] for j in range(lk))
    return out


def _loop_rank(x):
    return np.array([1.0 + sum(1 for u in x if u < v) + (sum(1 for u in x if u == v) - 1) / 2.0
                     for v in x])


def _loop_pearson(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y))
    vx = sum((a - mx) ** 2 for a in x)
    vy = sum((b - my) ** 2 for b in y)
    return cov / np.sqrt(vx * vy)


# -- gradient fragments -----------------------------------------------------------


def _fragment_glp(rng):
    lvl = GlpLevel(2, 4, 4, "FR", rng, np.float64)
    fd = Tensor(rng.normal(size=(1, 2, 4, 4)), requires_grad=True)
    fr = Tensor(rng.normal(size=(1, 2, 4, 4)), requires_grad=True)
    target = rng.normal(size=(1, 4, 4))

    def loss():
        pooled = lvl.pool_project(lvl.fuse_fr(fd, fr))
        diff = ag.sub(pooled, target)
        return ag.mean(ag.mul(diff, diff))

    tensors = {"fd": fd, "fr": fr}
    tensors.update({f"glp.{n}": p for n, p in lvl.named_parameters()})
    return loss, tensors


def _fragment_msca(rng):
    block = MscaBlock(4, 2, rng, np.float64)
    g1 = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    g2 = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    target = rng.normal(size=(2, 3, 4))

    def loss():
        diff = ag.sub(block(g1, g2), target)
        return ag.mean(ag.mul(diff, diff))

    tensors = {"g1": g1, "g2": g2}
    tensors.update({f"msca.{n}": p for n, p in block.named_parameters()})
    return loss, tensors


def _fragment_sa(rng):
    block = SaBlock(4, 1, rng, np.float64)
    g = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    target = rng.normal(size=(2, 3, 4))

    def loss():
        diff = ag.sub(block(g), target)
        return ag.mean(ag.mul(diff, diff))

    tensors = {"g": g}
    tensors.update({f"sa.{n}": p for n, p in block.named_parameters()})
    return loss, tensors


def _fragment_fuse(rng):
    block = FusionBlock(4, 1, rng, np.float64)
    info = Tensor(rng.normal(size=(1, 3, 4)), requires_grad=True)
    weight = Tensor(rng.normal(size=(1, 3, 4)), requires_grad=True)
    target = rng.normal(size=(1, 3, 4))

    def loss():
        diff = ag.sub(block.fuse(info, weight), target)
        return ag.mean(ag.mul(diff, diff))

    tensors = {"info": info, "weight": weight}
    tensors.update({f"fuse.{n}": p for n, p in block.info_mlp.named_parameters()})
    tensors.update({f"fuse.w.{n}": p for n, p in block.weight_mlp.named_parameters()})
    return loss, tensors


def _fragment_clip_head(rng):
    head = ScoreHead(d_model=4, d_text=6, tau=5.0, rng=rng, dtype=np.float64)
    bank = rng.normal(size=(40, 6))
    bank /= np.linalg.norm(bank, axis=1, keepdims=True)
    bank_t = Tensor(bank)
    gs = [Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True) for _ in range(4)]
    target = rng.normal(size=(2,))

    def loss():
        sims = [head.similarity(head.project(g, i + 1), bank_t) for i, g in enumerate(gs)]
        diff = ag.sub(head.regress_score(sims), target)
        return ag.mean(ag.mul(diff, diff))

    tensors = {f"g{i}": g for i, g in enumerate(gs)}
    tensors.update({f"head.{n}": p for n, p in head.named_parameters()})
    return loss, tensors


def _fragment_mse(rng):
    pred = Tensor(rng.normal(size=(5,)), requires_grad=True)
    target = rng.normal(size=(5,))
    return (lambda: mse_loss(pred, target)), {"pred": pred}


GRADIENT_FRAGMENTS = {
    "glp": _fragment_glp,
    "msca": _fragment_msca,
    "sa": _fragment_sa,
    "fuse": _fragment_fuse,
    "clip_head": _fragment_clip_head,
    "mse_loss": _fragment_mse,
}


def gradient_check(fragment: str, seed: int = 0, h: float = FD_STEP,
                   max_entries: int = 24):
    """Finite-difference check of one named model fragment (f64)."""
    if fragment not in GRADIENT_FRAGMENTS:
        raise BpclipError(f"unknown fragment {fragment!r}; "
                          f"choose from {sorted(GRADIENT_FRAGMENTS)}")
    rng = np.random.default_rng(seed)
    loss_fn, tensors = GRADIENT_FRAGMENTS[fragment](rng)
    return check_gradients(loss_fn, tensors, h=h,
                           max_entries_per_tensor=max_entries,
                           rng=np.random.default_rng(seed + 1))


# -- checks ----------------------------------------------------------------------


def check_attention_oracle(cases: int = 20, seed: int = 0):
    rng = np.random.default_rng(seed)
    start = time.time()
    worst = 0.0
    worst_row_err = 0.0
    for _ in range(cases):
        b = int(rng.integers(1, 3))
        lq = int(rng.integers(1, 5))
        lk = int(rng.integers(1, 5))
        d = int(rng.integers(1, 9))
        q, k, v = (rng.normal(size=s) for s in ((b, lq, d), (b, lk, d), (b, lk, d)))
        cap = {}
        got = sdp_attention(Tensor(q), Tensor(k), Tensor(v), capture=cap).data
        expect = _loop_attention(q, k, v)
        denom = np.maximum(np.abs(expect), 1e-12)
        worst = max(worst, float((np.abs(got - expect) / denom).max()))
        worst_row_err = max(worst_row_err, float(np.abs(cap["probs"].sum(-1) - 1.0).max()))
    elapsed = time.time() - start
    ok = worst <= 1e-6 and worst_row_err <= 1e-12 and elapsed < 1.0
    return ("attention_oracle", ok,
            f"max rel {worst:.2e}, row-sum err {worst_row_err:.2e}, {elapsed:.2f}s")


def check_gradient_suite(seed: int = 0):
    start = time.time()
    details = []
    ok = True
    for name in GRADIENT_FRAGMENTS:
        report = gradient_check(name, seed=seed)
        details.append(f"{name}={report.max_rel_error:.2e}")
        ok = ok and report.passed(GRAD_TOL)
    # control: a corrupted gradient must be caught
    rng = np.random.default_rng(seed)
    loss_fn, tensors = GRADIENT_FRAGMENTS["msca"](rng)
    first = next(iter(tensors))
    corrupted = check_gradients(loss_fn, tensors, h=FD_STEP,
                                grad_scale={first: 1.01},
                                rng=np.random.default_rng(seed + 1))
    caught = not corrupted.passed(GRAD_TOL)
    ok = ok and caught
    elapsed = time.time() - start
    ok = ok and elapsed < 30.0
    return ("gradient_suite", ok,
            ", ".join(details) + f"; corrupted caught={caught}; {elapsed:.1f}s")


def check_shape_law():
    start = time.time()
    ok = True
    notes = []
    for size in (384, 64):
        cfg = ModelConfig(
            mode="NR",
            backbone=BackboneConfig(variant="tiny", stage_channels=(4, 8, 16, 32, 64),
                                    input_size=(size, size)),
            d_model=16, num_heads=2, d_text=8, tau=1.0, regress_hidden=8,
            norm_mean=(0, 0, 0), norm_std=(1, 1, 1), dtype="f32")
        model = QualityModel(cfg)
        x = Tensor(np.random.default_rng(0).uniform(size=(1, 3, size, size)).astype(np.float32))
        with ag.no_grad():
            pyramid = model.backbone(model._prep(x))
            pooled = model.glp(pyramid)
            fused = model.fusion(pooled)
        for i, lv in enumerate(pyramid, start=1):
            ok = ok and lv.shape[2:] == (size // 2**i, size // 2**i)
        seq = (size // 32) ** 2
        ok = ok and all(g.shape == (1, seq, 16) for g in pooled)
        ok = ok and len(fused) == 4
        notes.append(f"{size}: seq={seq}")
    head = ScoreHead(d_model=16, d_text=8, tau=1.0,
                     rng=np.random.default_rng(0), dtype=np.float32)
    ok = ok and head.regress.fc1.weight.shape[0] == 160
    elapsed = time.time() - start
    ok = ok and elapsed < 5.0
    return ("shape_law", ok, "; ".join(notes) + f"; regress_in=160; {elapsed:.1f}s")


def check_glp_invariants(seed: int = 0):
    rng = np.random.default_rng(seed)
    lvl = GlpLevel(3, 4, 4, "FR", rng, np.float64)
    f = Tensor(rng.normal(size=(2, 3, 8, 8)))
    mask = lvl.mask_of(Tensor(np.zeros((2, 3, 8, 8)))).data.reshape(2, -1)
    const = float(np.abs(mask - mask[:, :1]).max())
    x = rng.normal(size=(2, 3, 16, 16))
    pooled = ag.avg_pool2d(Tensor(x), 4).data
    mean_err = float(np.abs(pooled.mean((2, 3)) / x.mean((2, 3)) - 1.0).max())
    in_range = bool(np.all((lvl.mask_of(f).data > 0) & (lvl.mask_of(f).data < 1)))
    ok = const <= 1e-12 and mean_err <= 1e-6 and in_range
    return ("glp_invariants", ok,
            f"mask const err {const:.2e}, pooled-mean rel err {mean_err:.2e}, mask in (0,1)={in_range}")


def check_similarity_invariants(seed: int = 0):
    rng = np.random.default_rng(seed)
    from .clip_head import TextBank, default_inventory
    inv = default_inventory()
    dims = tuple((d["name"], tuple(d["adjectives"])) for d in inv["dimensions"])
    adjs = tuple(a for _, aa in dims for a in aa)
    emb = rng.normal(size=(40, 16))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    bank = TextBank(emb, adjs, dims)
    x = rng.normal(size=(3, 16))
    base = adjective_similarity(Tensor(x), bank, tau=10.0).data
    scale_err = max(float(np.abs(adjective_similarity(Tensor(a * x), bank, 10.0).data - base).max())
                    for a in (0.1, 1.0, 10.0))
    sums_err = float(np.abs(base.sum(-1) - 1.0).max())
    positive = bool(np.all(base > 0))
    uniform = adjective_similarity(Tensor(x), bank, tau=0.0).data
    uniform_err = float(np.abs(uniform - 1.0 / 40.0).max())
    cos = cosine_to_bank(Tensor(x), Tensor(emb)).data
    bounded = bool(np.all(np.abs(cos) <= 1.0 + 1e-6))
    ok = scale_err <= 1e-6 and sums_err <= 1e-6 and positive and uniform_err <= 1e-12 and bounded
    return ("similarity_invariants", ok,
            f"scale err {scale_err:.2e}, sum err {sums_err:.2e}, tau0 err {uniform_err:.2e}")


def check_metric_oracles(seed: int = 0, cases: int = 50):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        n = int(rng.integers(3, 25))
        pred = rng.normal(size=n)
        gt = rng.normal(size=n)
        if n >= 4 and rng.random() < 0.5:
            pred[1] = pred[0]
            gt[2] = gt[3]
        if np.ptp(pred) == 0 or np.ptp(gt) == 0:
            continue
        worst = max(worst, abs(srcc(pred, gt) - _loop_pearson(_loop_rank(pred), _loop_rank(gt))))
        worst = max(worst, abs(plcc(pred, gt) - _loop_pearson(pred, gt)))
    pred = rng.normal(size=15)
    gt = rng.normal(size=15)
    mono_exact = (srcc(np.exp(pred), gt) == srcc(pred, gt) == srcc(pred**3, gt))
    affine_err = abs(plcc(3.7 * pred + 1.2, gt) - plcc(pred, gt))
    ok = worst <= 1e-10 and mono_exact and affine_err <= 1e-12
    return ("metric_oracles", ok,
            f"oracle err {worst:.2e}, monotone exact={mono_exact}, affine err {affine_err:.2e}")


def check_schedule():
    lr = 1e-4
    errs = [abs(cosine_lr(0, lr, 0, 50) - lr),
            abs(cosine_lr(50, lr, 0, 50) - 0.0),
            abs(cosine_lr(25, lr, 0, 50) - lr / 2)]
    ok = max(errs) <= 1e-12
    return ("lr_schedule", ok, f"endpoint/midpoint errs {max(errs):.2e}")


def check_archive_round_trip(tmp_dir, seed: int = 0):
    import os
    rng = np.random.default_rng(seed)
    tensors = {"a.weight": rng.normal(size=(3, 4)).astype(np.float32),
               "b.bias": rng.normal(size=(7,)).astype(np.float64)}
    path = os.path.join(tmp_dir, "verify.bpta")
    archive.save_archive(tensors, path)
    loaded = archive.load_archive(path)
    bitwise = all(loaded[k].tobytes() == tensors[k].tobytes() for k in tensors)
    blob = bytearray(open(path, "rb").read())
    blob[-12] ^= 0x01
    open(path, "wb").write(bytes(blob))
    try:
        archive.load_archive(path)
        caught = False
    except archive.ChecksumError:
        caught = True
    ok = bitwise and caught
    return ("archive_round_trip", ok, f"bitwise={bitwise}, corruption caught={caught}")


def _ablated_fragment(name, rng):
    """Gradient fragments rewired per ablation switch."""
    if name == "top_down":
        block = MscaBlock(4, 2, rng, np.float64, direction="top_down")
        g1 = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        g2 = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        target = rng.normal(size=(2, 3, 4))

        def loss():
            diff = ag.sub(block(g1, g2), target)
            return ag.mean(ag.mul(diff, diff))

        tensors = {"g1": g1, "g2": g2}
        tensors.update(dict(block.named_parameters()))
        return loss, tensors
    if name == "single_branch":
        block = FusionBlock(4, 1, rng, np.float64, dual_branch=False)
        g1 = Tensor(rng.normal(size=(1, 3, 4)), requires_grad=True)
        g2 = Tensor(rng.normal(size=(1, 3, 4)), requires_grad=True)
        target = rng.normal(size=(1, 3, 4))

        def loss():
            diff = ag.sub(block(g1, g2), target)
            return ag.mean(ag.mul(diff, diff))

        tensors = {"g1": g1, "g2": g2}
        tensors.update(dict(block.named_parameters()))
        return loss, tensors
    # no_text_head: projected features feed the regression directly
    head = ScoreHead(d_model=4, d_text=6, tau=1.0, rng=rng, dtype=np.float64,
                     text_head=False)
    gs = [Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True) for _ in range(4)]
    target = rng.normal(size=(2,))

    def loss():
        xs = [head.project(g, i + 1) for i, g in enumerate(gs)]
        diff = ag.sub(head.regress_score(xs), target)
        return ag.mean(ag.mul(diff, diff))

    tensors = {f"g{i}": g for i, g in enumerate(gs)}
    tensors.update(dict(head.named_parameters()))
    return loss, tensors


def check_ablation_switches(seed: int = 0):
    """Ablated configs must build, keep the output contract, and pass the
    gradient fragments in their rewired form."""
    variants = {
        "single_branch": dict(dual_branch=False),
        "top_down": dict(msca_direction="top_down"),
        "no_text_head": dict(text_head=False),
    }
    ok = True
    notes = []
    for name, kw in variants.items():
        cfg = ModelConfig(
            mode="NR",
            backbone=BackboneConfig(variant="tiny", stage_channels=(2, 4, 6, 8, 10),
                                    input_size=(32, 32)),
            d_model=8, num_heads=2, d_text=8, tau=1.0, regress_hidden=8,
            norm_mean=(0, 0, 0), norm_std=(1, 1, 1), dtype="f64", **kw)
        model = QualityModel(cfg)
        if cfg.text_head:
            rng = np.random.default_rng(seed)
            emb = rng.normal(size=(40, 8))
            emb /= np.linalg.norm(emb, axis=1, keepdims=True)
            object.__setattr__(model, "_bank_tensor", Tensor(emb))
        with ag.no_grad():
            out = model(np.random.default_rng(seed).uniform(size=(1, 3, 32, 32)))
        shapes_ok = (out["score"].shape == (1,) and len(out["projected"]) == 4
                     and np.all(np.isfinite(out["score"].data)))
        loss_fn, tensors = _ablated_fragment(name, np.random.default_rng(seed))
        report = check_gradients(loss_fn, tensors, max_entries_per_tensor=16,
                                 rng=np.random.default_rng(seed + 1))
        ok = ok and shapes_ok and report.passed(GRAD_TOL)
        notes.append(f"{name}: shapes={shapes_ok}, grad {report.max_rel_error:.1e}")
    return ("ablation_switches", ok, "; ".join(notes))


def run_all(tmp_dir) -> list:
    checks = [
        check_attention_oracle(),
        check_gradient_suite(),
        check_shape_law(),
        check_glp_invariants(),
        check_similarity_invariants(),
        check_metric_oracles(),
        check_schedule(),
        check_archive_round_trip(tmp_dir),
        check_ablation_switches(),
    ]
    return checks
