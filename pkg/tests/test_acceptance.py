"""End-to-end acceptance checks, one test per criterion, each timed."""
import itertools
import json
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import disk
from lesionkit.classify import fuse_sum, kkt_residuals, train_svm
from lesionkit.classify.svm import fit_dual
from lesionkit.cli import main
from lesionkit.config import RunConfig
from lesionkit.evaluation import roc_auc
from lesionkit.features import CATALOG, asymmetry, border_fitting, color_triangle, extract_all, glcm_features, lbp_s_histogram
from lesionkit.featsel import anm_quality, entropy, mutual_information, nmi, nmifs_step, select
from lesionkit.imgproc import Region
from lesionkit.pipeline import Bundle, select_features, skin_model_for, train_bundle
from lesionkit.segment import SegConfig, otsu_level, segment_lesion, segment_variants, tdr
from lesionkit.skin import detect_skin
from lesionkit.synth import Preset, corpus_specs, gen_lesion, sample_spec

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module", autouse=True)
def warm_jit():
    # compile the numba kernels outside the timed sections
    img, gt, _ = gen_lesion(sample_spec("small", 1, np.random.default_rng(0)))
    segment_lesion(img, detect_skin(img, skin_model_for(RunConfig())))
    fit_dual(np.r_[np.zeros((3, 1)), np.ones((3, 1))], [0, 0, 0, 1, 1, 1])


@pytest.fixture(scope="module")
def corpus200(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus200")
    assert main(["synth", "--benign", "100", "--melanoma", "100", "--preset", "default", "--seed", "0", "--out", str(out), "--jobs", "1"]) == 0
    return out


# ---------------------------------------------------------------- 1


def test_c1_bookkeeping(small_features, verdict):
    X, y = small_features
    bundle = train_bundle(X, y, RunConfig())
    t0 = time.perf_counter()
    counts = CATALOG.category_counts()
    lengths = bundle.lengths()
    dt = time.perf_counter() - t0
    ok = (
        len(CATALOG) == 116
        and counts == {"color": 54, "border": 16, "asymmetry": 1, "texture": 45}
        and [lengths[k] for k in ("color", "border", "asymmetry", "texture", "lbp")] == [3, 2, 1, 3, 36]
        and dt < 1
    )
    assert verdict(1, ok, f"catalog {len(CATALOG)} {counts}, lengths {lengths}, {dt:.3f}s")


# ---------------------------------------------------------------- 2


def otsu_sweep(hist):
    """Exhaustive 256-way sweep of w0 w1 (mu0 - mu1)^2 in exact arithmetic."""
    n = int(sum(hist))
    best, best_t = None, None
    n0 = s0 = 0
    total_s = sum(i * int(c) for i, c in enumerate(hist))
    for t in range(1, 256):
        n0 += int(hist[t - 1])
        s0 += (t - 1) * int(hist[t - 1])
        n1 = n - n0
        if n0 == 0 or n1 == 0:
            continue
        var = Fraction(n0 * n1, n * n) * (Fraction(s0, n0) - Fraction(total_s - s0, n1)) ** 2
        if best is None or var > best:
            best, best_t = var, t
    return best_t


def test_c2_otsu(verdict):
    rng = np.random.default_rng(2)
    hists = []
    for i in range(100):
        kind = i % 3
        if kind == 0:
            h = rng.integers(0, 50, 256)
        elif kind == 1:
            h = np.zeros(256, int)
            idx = rng.choice(256, rng.integers(2, 20), replace=False)
            h[idx] = rng.integers(1, 1000, len(idx))
        else:
            x = np.r_[rng.normal(rng.uniform(30, 120), 15, 800), rng.normal(rng.uniform(130, 220), 20, 600)]
            h = np.bincount(np.clip(x, 0, 255).astype(int), minlength=256)
        hists.append(h)
    t0 = time.perf_counter()
    got = [otsu_level(h) for h in hists]
    dt = time.perf_counter() - t0
    agree = sum(g == otsu_sweep(h) for g, h in zip(got, hists))
    assert verdict(2, agree == 100 and dt < 1, f"{agree}/100 match the exhaustive sweep, {dt:.3f}s")


# ---------------------------------------------------------------- 3


def _mi(x, y):
    n = len(x)
    out = 0.0
    for a in set(x):
        for b in set(y):
            c = sum(1 for u, v in zip(x, y) if u == a and v == b)
            if c:
                pa = sum(1 for u in x if u == a) / n
                pb = sum(1 for v in y if v == b) / n
                out += c / n * math.log2(c / n / (pa * pb))
    return out


def _h(x):
    n = len(x)
    return -sum(x.count(a) / n * math.log2(x.count(a) / n) for a in set(x))


def _anm(f, lab):
    mu = sum(f) / len(f)
    sd = math.sqrt(sum((v - mu) ** 2 for v in f) / len(f))
    z = [(v - mu) / sd for v in f]
    q = 0.0
    for i in range(len(z)):
        k = math.ceil(0.5 * lab.count(lab[i]))
        own = sorted(abs(z[i] - z[j]) for j in range(len(z)) if j != i and lab[j] == lab[i])[:k]
        oth = sorted(abs(z[i] - z[j]) for j in range(len(z)) if lab[j] != lab[i])[:k]
        q += abs(sum(oth) / len(oth) - sum(own) / len(own))
    return q


def test_c3_information_oracles(verdict):
    rng = np.random.default_rng(3)
    worst = 0.0
    step_ok = 0
    t_mod = 0.0
    for _ in range(100):
        n = int(rng.integers(6, 21))
        lab = rng.permutation(np.repeat([0, 1], [n // 2, n - n // 2]))
        x = rng.integers(0, 4, n)
        x[:2] = [0, 1]
        f = rng.normal(size=n)
        t0 = time.perf_counter()
        vals = (mutual_information(x, lab), nmi(x, lab), anm_quality(f, lab))
        t_mod += time.perf_counter() - t0
        xl, ll = x.tolist(), lab.tolist()
        ref = (_mi(xl, ll), _mi(xl, ll) / min(_h(xl), _h(ll)), _anm(f.tolist(), ll))
        worst = max(worst, *(abs(a - b) for a, b in zip(vals, ref)))

        p = int(rng.integers(2, 7))
        Xd = rng.integers(0, 3, (n, p))
        Xd[:2] = [[0] * p, [1] * p]
        sel = rng.choice(p, int(rng.integers(0, p)), replace=False).tolist()
        cand = [c for c in range(p) if c not in sel]
        t0 = time.perf_counter()
        got = nmifs_step(Xd, lab, cand, sel)
        t_mod += time.perf_counter() - t0
        cols = [Xd[:, c].tolist() for c in range(p)]
        score = {
            c: _mi(ll, cols[c]) - (sum(_mi(cols[c], cols[s]) / min(_h(cols[c]), _h(cols[s])) for s in sel) / len(sel) if sel else 0.0)
            for c in cand
        }
        best = max(score.values())
        step_ok += got == min(c for c in cand if score[c] >= best - 1e-12)
    ok = worst <= 1e-12 and step_ok == 100 and t_mod < 5
    assert verdict(3, ok, f"max |module - oracle| {worst:.2e}, NMIFS steps {step_ok}/100, {t_mod:.2f}s")


# ---------------------------------------------------------------- 4


def test_c4_margin(verdict):
    rng = np.random.default_rng(4)
    wins = 0
    t0 = time.perf_counter()
    for _ in range(100):
        n = 20
        labels = np.repeat([0, 1], n // 2)
        wide = np.r_[rng.uniform(0, 0.39, n // 2), rng.uniform(0.61, 1.0, n // 2)]
        tight = np.r_[rng.uniform(0, 0.05, n // 2), rng.uniform(0.95, 1.0, n // 2)]
        wide[0] = tight[0] = 0.0
        wide[-1] = tight[-1] = 1.0
        order = rng.permutation(n)
        X = np.column_stack([wide, tight])[order]
        y = labels[order]
        mi = select(X, y, 1, mode="mi")
        hy = select(X, y, 1, mode="hybrid", alpha=0.4)
        tie = abs(mi.scores[0] - mutual_information(y, (X[:, 1] >= 0.5).astype(int))) <= 1e-12
        wins += tie and mi.indices == [0] and hy.indices == [1]
    dt = time.perf_counter() - t0
    assert verdict(4, wins == 100 and dt < 5, f"{wins}/100 MI ties with hybrid choosing the larger margin, {dt:.2f}s")


# ---------------------------------------------------------------- 5 and 6


@pytest.fixture(scope="module")
def tdr_run():
    specs = corpus_specs(100, 100, "default", 5)
    model = skin_model_for(RunConfig())
    cfg = SegConfig()
    rows = []
    t0 = time.perf_counter()
    for spec in specs:
        img, gt, _ = gen_lesion(spec)
        res = segment_variants(img, detect_skin(img, model), cfg)
        row = {}
        for name, seg in res.items():
            row[name] = 0.0 if isinstance(seg, Exception) else tdr(gt, seg.mask)
        fused = res["otsu+mst"]
        row["coarse"] = 0.0 if isinstance(fused, Exception) else tdr(gt, fused.coarse_upsampled)
        rows.append(row)
    dt = time.perf_counter() - t0
    means = {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}
    return means, dt


def test_c5_segmentation_ordering(tdr_run, verdict):
    m, dt = tdr_run
    ok = m["otsu+mst"] >= m["otsu"] and m["otsu+mst"] >= m["mst"] and m["otsu+mst"] >= 85 and dt < 120
    detail = f"mean TDR fused {m['otsu+mst']:.2f}, otsu {m['otsu']:.2f}, mst {m['mst']:.2f} on 200 images, {dt:.1f}s"
    assert verdict(5, ok, detail)


def test_c6_fine_beats_coarse(tdr_run, verdict):
    m, _ = tdr_run
    ok = m["otsu+mst"] >= m["coarse"]
    assert verdict(6, ok, f"mean TDR fine {m['otsu+mst']:.2f} vs coarse upsampled {m['coarse']:.2f}")


# ---------------------------------------------------------------- 7


def test_c7_feature_invariants(verdict):
    t0 = time.perf_counter()
    fails = []
    rng = np.random.default_rng(7)
    for label in (0, 1, 1):
        spec = sample_spec("small", label, rng)
        img, gt, _ = gen_lesion(spec)
        a = extract_all(img, gt).values
        big = np.zeros((img.shape[0] + 23, img.shape[1] + 31, 3), np.uint8)
        big_m = np.zeros(big.shape[:2], bool)
        big[13 : 13 + img.shape[0], 21 : 21 + img.shape[1]] = img
        big_m[13 : 13 + img.shape[0], 21 : 21 + img.shape[1]] = gt
        if not np.array_equal(a, extract_all(big, big_m).values):
            fails.append("translation")

    m = disk((181, 181), 90, 90, 80)
    reg = Region.from_mask(m)
    yy, xx = np.mgrid[0:181, 0:181]
    radial = 50 + 150 * np.hypot(xx - 90, yy - 90) / 80
    span = np.ptp(radial[m])
    for pa, sp in itertools.product((4, 8, 12, 16), (2, 4, 8)):
        if color_triangle(np.full(m.shape, 120.0), reg, pa, sp) != 0:
            fails.append(f"ct uniform {pa}/{sp}")
        if color_triangle(radial, reg, pa, sp) > 0.02 * span:
            fails.append(f"ct radial {pa}/{sp}")

    circle = Region.from_mask(disk((240, 240), 120, 120, 100))
    for nt in (8, 12, 16, 20, 24, 28):
        if border_fitting(circle.boundary, nt)[1] > 0.01:
            fails.append(f"bf circle nt={nt}")

    sq = np.zeros((60, 60), bool)
    sq[10:50, 10:50] = True
    for shape in (disk((80, 80), 40, 40, 25), disk((81, 81), 40.3, 39.6, 31), sq):
        if asymmetry(Region.from_mask(shape)) > 0.05:
            fails.append("asymmetry")

    for _ in range(5):
        g = rng.integers(0, 256, (30, 34)).astype(float)
        mk = rng.random((30, 34)) < 0.8
        for k in (1, 2, 3):
            if not np.array_equal(lbp_s_histogram(g, mk), lbp_s_histogram(np.rot90(g, k), np.rot90(mk, k))):
                fails.append("lbp rotation")

    for lv in (32, 64):
        if not np.array_equal(glcm_features(np.full((20, 20), 77.0), np.ones((20, 20), bool), lv), [0, 1, 0, 1]):
            fails.append("glcm constant")
    dt = time.perf_counter() - t0
    ok = not fails and dt < 30
    assert verdict(7, ok, f"{'all invariants hold' if not fails else 'violations: ' + ', '.join(fails)}, {dt:.2f}s")


# ---------------------------------------------------------------- 8


def test_c8_classifier_contracts(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    fails = []
    X = np.vstack([rng.normal(0, 1, (40, 2)), rng.normal(8, 1, (25, 2))])
    y = np.r_[np.zeros(40, int), np.ones(25, int)]
    if not (train_svm(X, y, C=10).predict(X) == y).all():
        fails.append("separable accuracy")

    Xo = np.vstack([rng.normal(0, 1, (80, 2)), rng.normal(1.2, 1, (20, 2))])
    yo = np.r_[np.zeros(80, int), np.ones(20, int)]
    worst = 0.0
    sens = []
    for w in (1.0, 1.5, 3.0, 6.0):
        model = fit_dual(Xo, yo, weight_mm=w)
        worst = max(worst, kkt_residuals(model, Xo).max())
        sens.append(float(model.predict(Xo)[yo == 1].mean()))
    if worst > 1e-3:
        fails.append(f"kkt {worst:.2e}")
    if any(a > b for a, b in zip(sens, sens[1:])):
        fails.append(f"sensitivity {sens}")

    if any(fuse_sum(bits) != int(any(bits)) for bits in itertools.product((0, 1), repeat=4)):
        fails.append("fuse_sum")

    for _ in range(20):
        n = int(rng.integers(4, 30))
        truth = rng.permutation(np.r_[[0, 1], rng.integers(0, 2, n - 2)])
        soft = rng.integers(0, 5, n) / 4
        pos, neg = soft[truth == 1], soft[truth == 0]
        pairs = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg) / (len(pos) * len(neg))
        if abs(roc_auc(soft, truth)[1] - pairs) > 1e-12:
            fails.append("auc")
    dt = time.perf_counter() - t0
    ok = not fails and dt < 30
    detail = f"max KKT residual {worst:.1e}, sensitivity by MM weight {[round(s, 3) for s in sens]}, {dt:.2f}s"
    assert verdict(8, ok, detail if not fails else "violations: " + ", ".join(fails))


# ---------------------------------------------------------------- 9, 10, 11


@pytest.fixture(scope="module")
def evaluation_runs(corpus200, tmp_path_factory):
    out = tmp_path_factory.mktemp("eval")
    runs = []
    for i in range(2):
        rep = out / f"report{i}.json"
        t0 = time.perf_counter()
        code = main(["evaluate", "--manifest", str(corpus200), "--out", str(rep), "--jobs", "1"])
        runs.append((code, rep.read_bytes() if rep.exists() else b"", time.perf_counter() - t0))
    return runs


def test_c9_end_to_end(evaluation_runs, verdict):
    code, text, dt = evaluation_runs[0]
    rep = json.loads(text)
    ba = rep["confusion"]["balanced_accuracy"]
    s90 = rep["sens_at_spec"]["0.90"]
    ok = code == 0 and rep["fusion"] == "hierarchical" and ba >= 0.9 and s90 >= 0.8 and dt < 600
    assert verdict(9, ok, f"pooled balanced accuracy {ba:.3f}, sens@spec0.9 {s90:.3f}, AUC {rep['auc']:.3f}, {dt:.0f}s")


def test_c10_determinism(evaluation_runs, verdict):
    (c1, a, _), (c2, b, _) = evaluation_runs
    ok = c1 == c2 == 0 and a == b and len(a) > 0
    assert verdict(10, ok, f"reports {'byte-identical' if a == b else 'differ'} ({len(a)} bytes)")


def test_c11_predict_1024(corpus200, tmp_path, verdict):
    table = tmp_path / "features.csv"
    assert main(["features", "--manifest", str(corpus200), "--out", str(table), "--jobs", "1"]) == 0
    bundle = tmp_path / "bundle.json"
    assert main(["train", "--table", str(table), "--out", str(bundle)]) == 0
    spec = sample_spec(Preset("big", size=1024, radius=(110.0, 190.0)), 1, np.random.default_rng(11))
    img, _, _ = gen_lesion(spec)
    from lesionkit.imgproc import write_image

    path = tmp_path / "big.png"
    write_image(path, img)
    b = Bundle.load(bundle)
    cfg = RunConfig()
    model = skin_model_for(cfg)
    from lesionkit.imgproc import read_image

    t0 = time.perf_counter()
    image = read_image(path)
    seg = segment_lesion(image, detect_skin(image, model), cfg.seg_config())
    out = b.classify(extract_all(image, seg).values[None, :])
    dt = time.perf_counter() - t0
    verdict_name = "melanoma" if out["hard"][0] else "benign"
    assert verdict(11, dt < 5, f"1024x1024 predict in {dt:.2f}s ({verdict_name})")
