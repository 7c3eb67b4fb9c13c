"""Smoke test for the pymemslice extension module.

Build and install first:
    maturin build --release -m crates/py/Cargo.toml -o dist
    pip install dist/pymemslice-*.whl
"""

import pymemslice as ms


def close(a, b, tol=1e-3):
    return all(abs(x - y) <= tol * max(1.0, abs(y)) for ra, rb in zip(a, b) for x, y in zip(ra, rb))


def test_system():
    sys = ms.System(slices=1, memory="hmc1")
    assert abs(sys.knee - 273.0667) < 1e-3
    assert sys.attainable(0.0) == 0.0
    assert sys.attainable(1e6) == sys.peak_flops
    again = ms.System.from_toml(sys.to_toml())
    assert again.slices == 1
    try:
        ms.System(memory="dram")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown preset accepted")


def test_matmul_run():
    result = ms.run(ms.Workload.matmul(8, 40, 20), ms.System(slices=4))
    stats = result.stats
    assert stats["flops"] == 2 * 8 * 40 * 20
    assert stats["flops_per_s"] <= stats["attainable_flops_per_s"] * 1.001
    assert result.max_error() < 1e-3
    c = result.output("C")
    assert len(c) == 8 and len(c[0]) == 20


def test_oracle_matmul():
    assert close(ms.matmul([[1, 2], [3, 4]], [[5], [6]]), [[17], [39]])


def test_translator_trace_and_determinism():
    w = ms.Workload.translator(hidden=3, batch=3, training=True)
    sys = ms.System(slices=2, seed=5)
    a = ms.run(w, sys, trace=True)
    b = ms.run(w, sys, trace=True)
    assert a.csv_row() == b.csv_row()
    assert a.trace == b.trace and a.trace
    assert a.max_error() < 1e-3
    assert any(name.startswith("dW") for name in a.outputs())


def test_timing_only():
    w = ms.Workload.preset("lstm3")
    sys = ms.System(slices=4)
    assert ms.run(w, sys).csv_row() == ms.run(w, sys, functional=False).csv_row()


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_"):
            fn()
            print(f"{name}: ok")
