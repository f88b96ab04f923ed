"""Builds the fishreid extension and exercises its API.

    python3 python/smoke_test.py [--release]
"""

import argparse
import math
import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parents[1]


def build(release):
    cmd = ["cargo", "build", "-p", "reid-python"] + (["--release"] if release else [])
    subprocess.run(cmd, cwd=ROOT, check=True)
    profile = "release" if release else "debug"
    lib = ROOT / "target" / profile / "libfishreid.so"
    dest = pathlib.Path(tempfile.mkdtemp()) / "fishreid.so"
    shutil.copy(lib, dest)
    sys.path.insert(0, str(dest.parent))


def check(cond, what):
    if not cond:
        raise SystemExit(f"FAIL {what}")
    print(f"ok   {what}")


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--release", action="store_true")
    args = parser.parse_args()
    build(args.release)
    import fishreid as fr

    rng = fr.Rng(0)
    check(rng.next() == 0xE220A8397B1DCDAF, "rng first draw")
    check(sorted(fr.Rng(7).shuffle(5)) == list(range(5)), "shuffle permutation")

    check(fr.letterbox_geometry(100, 200, 224) == (56, 0, 112, 224), "letterbox geometry")
    canvas = fr.resize_pad_square([0.5] * (10 * 20 * 3), 10, 20, target=8)
    check(len(canvas) == 8 * 8 * 3, "canvas size")
    tensor = fr.normalize([1.0] * 3, 1)
    check(abs(tensor[2] - (1 - 0.0535) / 0.1412) < 1e-12, "normalize")
    mean, std = fr.compute_stats([([0.0, 0.0, 0.0, 1.0, 1.0, 1.0], 1, 2)])
    check(mean == [0.5] * 3 and std == [0.5] * 3, "compute_stats")

    check(abs(fr.average_precision([True, False, True], 2) - 5 / 6) < 1e-12, "average precision")
    check(abs(fr.triplet_loss([[0.0], [1.0], [0.8]], [(0, 1, 2)], 0.5) - 0.7) < 1e-12, "triplet loss")
    d = fr.pairwise_euclidean([[0.0], [10.0], [1.0], [11.0]])
    hard = fr.mine("hard", d, ["A", "A", "B", "B"], 0.5)
    check(len(hard) == 6, "hard mining")

    train, val, test = fr.synthetic_splits("separable", 0, 12, 4, 10, 8)
    check(len(train) == 96 and test.dim == 512, "synthetic splits")
    batch = fr.pk_sample(train.fish_ids, 4, 4, 1)
    check(len(batch) == 16, "pk batch")

    head, history = fr.train(train, val, epochs=5, embed_dim=16, learning_rate=1e-3, seed=2)
    check(len(history) == 5 and head.d_out == 16, "train")
    loss, gw, gb, active = fr.loss_backward(head, train.vectors[:3], [(0, 1, 2)], 0.5)
    check(len(gw) == 512 * 16 and len(gb) == 16 and math.isfinite(loss), "loss_backward")

    report = fr.evaluate(head.embed(test), seed=0)
    check(report["num_queries"] == 10 and report["k"] == fr.DEFAULT_K, "evaluate")
    matrix = fr.crosseval(test)
    check(len(matrix["cells"]) == 16, "crosseval")

    with tempfile.TemporaryDirectory() as tmp:
        fr.save_store(test, f"{tmp}/test")
        back = fr.load_store(f"{tmp}/test")
        check(back.vectors == test.vectors and back.record_ids == test.record_ids, "store round trip")
        head.save(f"{tmp}/head")
        loaded = fr.LinearHead.load(f"{tmp}/head").weight
        check(all(abs(a - b) <= 1e-6 * max(1.0, abs(b)) for a, b in zip(loaded, head.weight)), "head round trip (f32)")

    try:
        fr.load_store("/nonexistent/store")
        check(False, "missing store raises OSError")
    except OSError:
        check(True, "missing store raises OSError")
    print("smoke test passed")


if __name__ == "__main__":
    main()
