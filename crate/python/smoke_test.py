"""Quick check that the extension module loads and agrees with known values."""

import math

import lattice_ot_py as lo


def main():
    assert lo.log_mean(2.0, 2.0) == 2.0
    assert abs(lo.log_mean(1.0, math.e) - (math.e - 1.0)) < 1e-12
    assert abs(lo.harmonic_mean(1.0, 3.0) - 1.5) < 1e-15

    n = 8
    rho0 = [1.0 + 0.3 * math.sin(2 * math.pi * i / n) for i in range(n)]
    rho1 = [1.0 + 0.3 * math.sin(2 * math.pi * (i / n - 0.25)) for i in range(n)]

    h = lo.heat(rho0, 0.01)
    assert abs(sum(h) / n - 1.0) < 1e-12

    w = lo.distance(rho0, rho1)
    wt = lo.distance(rho0, rho1, metric="harmonic")
    w2n = lo.w2n(rho0, rho1)
    assert w["converged"] and w["residual"] < 1e-9
    assert 0.0 < w["value"] <= wt["value"] + 2e-7
    assert w["value"] <= 1.56 * w2n + 2e-7
    assert lo.distance(rho0, rho0)["value"] < 1e-6

    sched = lo.choose_constants(0.1, 0.5)
    assert 0.0 < sched["a"] < 0.25 and 0.0 < sched["b"] < 0.25

    rows, ok = lo.run_experiment('experiment = "suite"\nn = [6]\ncases = 2\n')
    assert ok and rows and all(r["pass"] for r in rows)

    try:
        lo.distance(rho0, rho1[:-1])
    except ValueError:
        pass
    else:
        raise AssertionError("shape mismatch accepted")

    print(f"ok: W_N = {w['value']:.6f}, W~_N = {wt['value']:.6f}, W_2,N = {w2n:.6f}")


if __name__ == "__main__":
    main()
