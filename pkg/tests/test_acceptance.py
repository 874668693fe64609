"""Acceptance criteria, one test each, at their stated tolerances and time budgets.

Every test records a PASS/FAIL line that is printed in the pytest terminal
summary under "acceptance criteria". The training criteria (5, 6, 7) share one
synthetic-data workspace and the source model trained in criterion 5.
"""
import io
import json
import time
from contextlib import redirect_stdout
from pathlib import Path

import numpy as np
import pytest

from smelter import data, distort, imageproc
from smelter import net as N
from smelter.cli import main
from smelter.gradcheck import check_gradients

from .conftest import ACCEPTANCE

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
TRANSFER_SEEDS = (0, 1, 2)


def report(number, title, ok, detail):
    ACCEPTANCE[number] = f"criterion {number} {title}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(ACCEPTANCE[number])


def cli(*argv):
    buf = io.StringIO()
    with redirect_stdout(buf):
        code = main([str(a) for a in argv])
    assert code == 0, f"smelter {' '.join(map(str, argv))} exited {code}"
    return buf.getvalue()


# -- 1 -----------------------------------------------------------------------------------

def test_c1_parameter_counts():
    t0 = time.perf_counter()
    full = cli("params", "--topology", "vgg16", "--classes", 1000)
    frozen = cli("params", "--topology", "vgg16", "--classes", 2, "--freeze", "conv*")
    elapsed = time.perf_counter() - t0
    total = full.splitlines()[-2]
    trainable = frozen.splitlines()[-1]
    ok = total == "total 138,357,544" and trainable == "trainable 119,554,050" and elapsed < 1.0
    report(1, "parameter counts", ok, f"{total}; {trainable}; {elapsed:.2f} s")
    assert ok


# -- 2 -----------------------------------------------------------------------------------

def test_c2_gradient_check():
    t0 = time.perf_counter()
    net = N.build_minicnn(rng=0).astype(np.float64)
    x = np.random.default_rng(0).standard_normal((2, 3, 64, 64))
    res = check_gradients(net, x, np.array([0, 1]), n_samples=100, eps=1e-3, rng=0)
    elapsed = time.perf_counter() - t0
    ok = len(res.checked) == 100 and res.max_rel_error < 1e-4 and elapsed < 60
    report(2, "gradient check", ok,
           f"max rel err {res.max_rel_error:.2e} over {len(res.checked)} parameters, "
           f"{res.skipped} kink-crossing draws resampled, {elapsed:.1f} s")
    assert ok


# -- 3 -----------------------------------------------------------------------------------

def test_c3_frozen_layers_bit_identical(tmp_path):
    t0 = time.perf_counter()
    cli("synth", "--n", 64, "--out", tmp_path / "d", "--seed", 3)
    init = N.build_minicnn(rng=3)
    init.channel_mean = np.full(3, 120.0, np.float32)
    init.input_scale = 1 / 64
    N.save_checkpoint(init, tmp_path / "init.ckpt")
    cli("finetune", "--config", CONFIGS / "desk_transfer.cfg", "--manifest", tmp_path / "d" / "manifest.csv",
        "--init", tmp_path / "init.ckpt", "--freeze", "conv*", "--iterations", 50, "--batch", 16,
        "--out", tmp_path / "ft")
    elapsed = time.perf_counter() - t0
    after = N.load_checkpoint(tmp_path / "ft" / "model.ckpt")
    log = (tmp_path / "ft" / "train_log.csv").read_text().splitlines()
    convs = [k for k in init.params if k.startswith("conv")]
    same = all(np.array_equal(init.params[k].data, after.params[k].data) for k in convs)
    moved = not np.array_equal(init.params["fc5.weight"].data, after.params["fc5.weight"].data)
    steps = int(log[-1].split(",")[0])
    ok = same and moved and steps == 50 and elapsed < 60
    report(3, "frozen-layer bit identity", ok,
           f"{len(convs)} conv tensors {'unchanged' if same else 'CHANGED'} after {steps} steps, "
           f"head {'updated' if moved else 'not updated'}, {elapsed:.1f} s")
    assert ok


# -- 4 -----------------------------------------------------------------------------------

def test_c4_genki_fold_stratification():
    t0 = time.perf_counter()
    labels = np.array([1] * 2162 + [0] * 1838)
    part = data.stratified_folds(labels, 4, seed=0)
    smiles = [int(labels[f].sum()) for f in part.folds]
    nons = [len(f) - s for f, s in zip(part.folds, smiles)]
    elapsed = time.perf_counter() - t0
    ok = (sorted(smiles) == [540, 540, 541, 541] and sorted(nons) == [459, 459, 460, 460]
          and all(s + n == 1000 for s, n in zip(smiles, nons)) and elapsed < 1.0)
    report(4, "GENKI-4K fold stratification", ok, f"smile {smiles}, non-smile {nons}, {elapsed:.3f} s")
    assert ok


# -- 5, 6, 7: desk-scale training on synthetic faces ---------------------------------------

@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    cli("synth", "--n", 2000, "--variant", "source", "--out", root / "source_train", "--seed", 1)
    cli("synth", "--n", 500, "--variant", "source", "--out", root / "source_test", "--seed", 2)
    cli("synth", "--n", 600, "--variant", "target", "--out", root / "target_test", "--seed", 5)
    for s in TRANSFER_SEEDS:
        cli("synth", "--n", 400, "--variant", "target", "--out", root / f"target_train_{s}", "--seed", 10 + s)
    return root


@pytest.fixture(scope="module")
def source_run(desk):
    t0 = time.perf_counter()
    out = cli("train", "--config", CONFIGS / "desk_source.cfg",
              "--manifest", desk / "source_train" / "manifest.csv",
              "--test-manifest", desk / "source_test" / "manifest.csv", "--out", desk / "source_run")
    return json.loads(out), time.perf_counter() - t0


def test_c5_desk_scale_training(source_run):
    summary, elapsed = source_run
    acc = summary["test_accuracy"]
    ok = acc >= 0.95 and summary["iterations"] <= 1000 and elapsed < 300
    report(5, "desk-scale training", ok,
           f"held-out accuracy {acc:.4f} on 500 samples after {summary['iterations']} iterations, {elapsed:.1f} s")
    assert ok


@pytest.fixture(scope="module")
def transfer_runs(desk, source_run):
    t0 = time.perf_counter()
    ckpt = Path(source_run[0]["checkpoint"])
    results = {"pretrained": [], "random": []}
    for s in TRANSFER_SEEDS:
        common = ["--config", CONFIGS / "desk_transfer.cfg", "--seed", s,
                  "--manifest", desk / f"target_train_{s}" / "manifest.csv",
                  "--test-manifest", desk / "target_test" / "manifest.csv"]
        pre = json.loads(cli("finetune", *common, "--init", ckpt, "--freeze", "conv*",
                             "--out", desk / f"ft_pre_{s}"))
        rnd = json.loads(cli("train", *common, "--out", desk / f"ft_rand_{s}"))
        assert pre["trainable_parameters"] == rnd["trainable_parameters"] == 2050
        results["pretrained"].append(pre["test_accuracy"])
        results["random"].append(rnd["test_accuracy"])
    return results, time.perf_counter() - t0


def test_c6_transfer_beats_random_init(transfer_runs):
    results, elapsed = transfer_runs
    pre = float(np.mean(results["pretrained"]))
    rnd = float(np.mean(results["random"]))
    ok = pre > rnd and elapsed < 600
    fmt = ", ".join
    report(6, "transfer learning", ok,
           f"mean accuracy pretrained {pre:.4f} [{fmt(f'{a:.3f}' for a in results['pretrained'])}] vs "
           f"random {rnd:.4f} [{fmt(f'{a:.3f}' for a in results['random'])}], {elapsed:.1f} s")
    assert ok


def _direct_blur(img, sigma):
    k = distort.gaussian_kernel_1d(sigma)
    k2 = np.outer(k, k)
    r = len(k) // 2
    pad = np.pad(img.astype(np.float64), ((r, r), (r, r), (0, 0)), mode="edge")
    h, w, _ = img.shape
    out = np.zeros(img.shape)
    for dy in range(2 * r + 1):
        for dx in range(2 * r + 1):
            out += k2[dy, dx] * pad[dy:dy + h, dx:dx + w]
    return np.clip(np.floor(out + 0.5), 0, 255)


def test_c7_distortion_sweeps(desk, transfer_runs):
    t0 = time.perf_counter()
    ckpt = desk / "ft_pre_0" / "model.ckpt"
    manifest = desk / "target_test" / "manifest.csv"
    clean = json.loads(cli("eval", "--ckpt", ckpt, "--manifest", manifest))["accuracy"]
    sweeps = {}
    for kind in ("noise", "blur"):
        text = cli("sweep", "--ckpt", ckpt, "--manifest", manifest, "--kind", kind)
        rows = [line.split(",") for line in text.splitlines() if line and not line.startswith(("#", "kind"))]
        sweeps[kind] = [(float(r[1]), float(r[2]), int(r[3])) for r in rows]
    rng = np.random.default_rng(7)
    worst = 0
    for sigma in range(1, 11):
        img = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
        worst = max(worst, int(np.abs(distort.gaussian_blur(img, sigma).astype(int) - _direct_blur(img, sigma)).max()))
    elapsed = time.perf_counter() - t0

    shape_ok = all([s for s, _, _ in rows] == [float(i) for i in range(11)] and all(n == 600 for *_, n in rows)
                   for rows in sweeps.values())
    zero_ok = all(rows[0][1] == clean for rows in sweeps.values())
    noise10 = sweeps["noise"][-1][1]
    ok = shape_ok and zero_ok and noise10 <= clean and worst <= 1 and elapsed < 300
    report(7, "distortion sweeps", ok,
           f"clean {clean:.4f}, sigma=0 rows {'match' if zero_ok else 'DIFFER'}, noise@10 {noise10:.4f}, "
           f"blur@10 {sweeps['blur'][-1][1]:.4f}, separable-vs-direct max diff {worst}, {elapsed:.1f} s")
    assert ok


# -- 8 -----------------------------------------------------------------------------------

def test_c8_alignment_fidelity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    ys, xs = np.mgrid[0:256, 0:256].astype(np.float64)
    worst = 0.0
    for _ in range(200):
        a = rng.uniform(0.6, 1.4) * np.exp(1j * np.deg2rad(rng.uniform(-45, 45)))
        b = complex(128, 110) + complex(*rng.uniform(-25, 25, 2)) - a * complex(128, 90)
        eyes = [a * complex(*imageproc.CANONICAL_LEFT) + b, a * complex(*imageproc.CANONICAL_RIGHT) + b]
        face = np.zeros((256, 256))
        for e in eyes:  # a smooth blob centred on each known eye pixel
            face += 255 * np.exp(-((xs - e.real) ** 2 + (ys - e.imag) ** 2) / (2 * (3.0 * abs(a)) ** 2))
        img = imageproc.to_uint8(np.repeat(face[..., None], 3, axis=2))
        lm = imageproc.Landmarks((eyes[0].real, eyes[0].imag), (eyes[1].real, eyes[1].imag))
        out = imageproc.warp_affine(img, imageproc.solve_alignment(lm), (256, 256))[..., 0].astype(np.float64)
        for tx, ty in (imageproc.CANONICAL_LEFT, imageproc.CANONICAL_RIGHT):
            tx, ty = int(tx), int(ty)
            win = out[ty - 12:ty + 13, tx - 12:tx + 13]
            gy, gx = np.mgrid[ty - 12:ty + 13, tx - 12:tx + 13]
            cx, cy = (win * gx).sum() / win.sum(), (win * gy).sum() / win.sum()
            worst = max(worst, float(np.hypot(cx - tx, cy - ty)))
    elapsed = time.perf_counter() - t0
    ok = worst < 0.5 and elapsed < 30
    report(8, "alignment fidelity", ok, f"max eye error {worst:.3f} px over 200 transforms, {elapsed:.1f} s")
    assert ok


# -- 9 -----------------------------------------------------------------------------------

def test_c9_cv_determinism(tmp_path):
    cli("synth", "--n", 96, "--out", tmp_path / "d", "--seed", 9)
    cfg = tmp_path / "cv.cfg"
    cfg.write_text("manifest = d/manifest.csv\niterations = 20\nbatch = 16\nval_every = 10\nseed = 9\n")
    outputs = {}
    for threads in (1, 2, 4, 1):
        outputs.setdefault(threads, []).append(cli("cv", "--config", cfg, "--threads", threads).encode())
    blobs = [b for runs in outputs.values() for b in runs]
    ok = len(set(blobs)) == 1
    report(9, "cv determinism", ok,
           f"{len(blobs)} runs at --threads 1, 2, 4, 1 {'byte-identical' if ok else 'DIFFER'}, "
           f"{len(json.loads(blobs[0])['folds'])} folds")
    assert ok
