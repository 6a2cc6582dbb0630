"""Quick end-to-end check of the Python bindings.

Build and install the extension first, e.g.

    pip install maturin
    maturin develop -m crates/py/Cargo.toml --release
"""

import math
import os
import tempfile

import nclosure_py as nc


def main():
    assert "exp1_rom" in nc.experiments()
    assert nc.iterations_per_epoch(200, 2, 6) == 18
    assert math.isclose(nc.lr_at(18, 0.075, 0.97, 18), 0.07275)
    assert nc.five_number_summary([1.0, 2.0, 3.0, 4.0, 5.0]) == (1.0, 2.0, 3.0, 4.0, 5.0)

    for check in nc.verify_gradients(seed=1):
        assert check["rel_error"] < 1e-4, check

    exp = nc.Experiment("toy", closure="distributed", seed=3)
    assert len(exp.times) == len(exp.truth) == 201
    assert len(exp.params) == exp.n_theta + exp.n_phi

    before = exp.evaluate()
    base = before["runs"]["baseline"]["states"]
    assert before["runs"]["closure"]["states"] == base

    records = exp.train(epochs=3)
    assert [r["epoch"] for r in records] == [0, 1, 2, 3]
    assert all(math.isfinite(r["val_loss"]) for r in records)

    after = exp.evaluate()
    assert after["runs"]["baseline"]["states"] == base
    print("closure train-window L2:", after["runs"]["closure"]["windows"]["train"]["l2"])

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "checkpoint.json")
        exp.save_checkpoint(path)
        again = nc.Experiment("toy", closure="distributed", seed=3)
        again.load_checkpoint(path)
        assert again.params == exp.params and again.epoch == 3
        try:
            nc.Experiment("toy", seed=3).load_checkpoint(path)
        except ValueError:
            pass
        else:
            raise AssertionError("a discrete experiment accepted a distributed checkpoint")

    print(exp)
    print("smoke test passed")


if __name__ == "__main__":
    main()
