"""Smoke test for the Python bindings.

Build and run from the repository root:

    cargo build -p perturb-learn-py --features extension-module
    python3 crates/python/python/smoke_test.py

The script copies target/debug/libperturb_learn_py.so next to a temp dir
as perturb_learn_py.so and imports it.
"""

import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "..", ".."))


def load_module():
    for profile in ("debug", "release"):
        src = os.path.join(ROOT, "target", profile, "libperturb_learn_py.so")
        if os.path.exists(src):
            tmp = tempfile.mkdtemp()
            shutil.copy(src, os.path.join(tmp, "perturb_learn_py.so"))
            sys.path.insert(0, tmp)
            import perturb_learn_py
            return perturb_learn_py
    sys.exit("extension not built; run cargo build -p perturb-learn-py --features extension-module")


def main():
    pl = load_module()

    train = pl.Dataset.synthetic(20, 400, eta=1.0, sigma=1.0, seed=1)
    test = pl.Dataset.synthetic(20, 200, eta=1.0, sigma=1.0, seed=2)
    assert len(train) == 400 and train.dim == 20
    assert train.hash() == pl.Dataset.synthetic(20, 400, eta=1.0, sigma=1.0, seed=1).hash()

    model = pl.Model.fit(train, epochs=10, seed=0)
    acc = model.accuracy(test)
    assert acc > 0.6, acc

    x = train.x(0)
    y = train.labels[0]
    r = pl.pgd_targeted(model, x, -y, norm="l2", epsilon=0.5, steps=20)
    assert r["l2"] <= 0.5 + 1e-9

    delta = pl.project([3.0, 4.0], 1.0, "l2")
    assert abs(math.hypot(*delta) - 1.0) < 1e-9

    assert pl.prox_l0_box([1.0, 0.05], [0.0, 0.0], 0.01, [-2.0, -2.0], [2.0, 2.0]) == [1.0, 0.0]

    dens = pl.DensityEstimator.gmm(train, k=2, seed=0)
    lq, g = dens.grad_log_density(x, y)
    assert math.isfinite(lq) and len(g) == 20

    lo, hi = [-5.0] * 20, [5.0] * 20
    p = pl.pcfe_l0(model, x, -y, lo, hi, density=dens, tau=0.1, beta=0.01, log_density=True)
    assert p["l0"] <= 20

    n = pl.noise_baseline(x, "l2", 0.5, seed=3)
    assert abs(math.dist(n, x) - 0.5) < 1e-9

    tr, te = pl.Dataset.spurious(n=500, n_test=400, seed=0)
    m2 = pl.Model.fit(tr, epochs=5)
    rep = pl.group_report(m2, te)
    assert rep["worst_group_accuracy"] <= rep["overall"] + 1e-12

    out = pl.run_pipeline(train, test, '[perturb]\nmethod = "pgd"\nnorm = "l2"\nepsilon = 0.5\nsteps = 20\n')
    assert 0.0 <= out["adv_test_acc"] <= 1.0

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.plrn")
        model.save(path)
        assert pl.Model.load(path).params == model.params
        try:
            pl.Model.load(os.path.join(d, "missing.plrn"))
        except FileNotFoundError:
            pass
        else:
            raise AssertionError("expected FileNotFoundError")

    print(f"ok: test_acc={acc:.3f} adv_test_acc={out['adv_test_acc']:.3f}")


if __name__ == "__main__":
    main()
