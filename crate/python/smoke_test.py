"""Smoke test for the dcml_py extension module.

Run python/build.sh first (or copy the built cdylib here as dcml_py.so),
then: python3 python/smoke_test.py
"""

import math
import os
import random
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import dcml_py


def approx(a, b, tol):
    assert abs(a - b) <= tol, f"{a} vs {b} (tol {tol})"


def main():
    # Kernel identities.
    c = dcml_py.BREAKDOWN_TUNING
    approx(c, 1.547, 1e-12)
    assert dcml_py.rho(0.0, c) == 0.0
    assert dcml_py.rho(2 * c, c) == 1.0
    t = 0.8 * c
    approx(dcml_py.weight(t, c) * t, dcml_py.psi(t, c), 1e-12)
    approx(
        dcml_py.tuning_constant_for_efficiency(0.85),
        dcml_py.EFFICIENT_TUNING,
        1e-5,
    )

    # M-scale of symmetric data is positive and scale-equivariant.
    rng = random.Random(7)
    r = [rng.gauss(0.0, 1.0) for _ in range(501)]
    sigma, degenerate = dcml_py.m_scale(r)
    assert sigma > 0 and not degenerate
    sigma3, _ = dcml_py.m_scale([3.0 * v for v in r])
    approx(sigma3, 3.0 * sigma, 1e-9 * sigma)

    # Constraint radii.
    approx(dcml_py.delta_regression(5, 100), 0.015, 1e-15)
    approx(dcml_py.delta_multivariate(5, 50, "scatter"), 0.05511367475647311, 1e-15)
    approx(dcml_py.delta_multivariate(5, 50, "location"), 0.010853706773146838, 1e-15)

    # Divergences vanish at equality.
    eye = [[1.0, 0.0], [0.0, 1.0]]
    approx(dcml_py.kl_scatter(eye, eye), 0.0, 1e-15)
    approx(dcml_py.kl_location([0.0, 0.0], [0.0, 0.0], eye), 0.0, 1e-15)
    assert dcml_py.kl_location([0.0, 0.0], [1.0, 0.0], eye) == 1.0

    # Regression chain on the bundled plant data.
    headers, rows = dcml_py.stackloss()
    assert headers == ["air_flow", "water_temp", "acid_conc", "stack_loss"]
    assert len(rows) == 21 and len(rows[0]) == 4
    good = [row for i, row in enumerate(rows, start=1) if i not in (1, 3, 4, 21)]
    x_good = [row[:3] for row in good]
    y_good = [row[3] for row in good]
    ls = dcml_py.fit_regression(x_good, y_good, "LS", seed=1)
    rmse = math.sqrt(
        sum(
            (yi - (b0 + sum(bj * xij for bj, xij in zip(ls.beta[1:], xi)))) ** 2
            for xi, yi, b0 in zip(x_good, y_good, [ls.beta[0]] * len(good))
        )
        / len(good)
    )
    approx(rmse, 1.095, 5e-3)

    x_all = [row[:3] for row in rows]
    y_all = [row[3] for row in rows]
    dc = dcml_py.fit_regression(x_all, y_all, "DCML", seed=1)
    assert dc.method == "DCML" and dc.sigma > 0
    assert dc.t is None or 0.0 <= dc.t <= 1.0
    assert dc.distance is not None and dc.distance >= 0.0
    mm = dcml_py.fit_regression(x_all, y_all, "MM", seed=1)
    assert len(mm.beta) == len(dc.beta) == 4

    # Multivariate chain on a seeded Gaussian sample with one wild point.
    obs = [[rng.gauss(0.0, 1.0) for _ in range(3)] for _ in range(80)]
    obs[0] = [50.0, 50.0, 50.0]
    fit = dcml_py.fit_multivariate(obs, seed=3)
    assert 0.0 <= fit.t_scatter <= 1.0 and 0.0 <= fit.t_location <= 1.0
    assert len(fit.dcml_mean) == 3 and len(fit.dcml_scatter) == 3
    # The blend must stay within its divergence budget of the robust anchor.
    kl = dcml_py.kl_scatter(fit.s_scatter, fit.dcml_scatter)
    assert kl <= dcml_py.delta_multivariate(3, 80, "scatter") * (1 + 1e-6)
    # The wild point must not drag the robust location anywhere near it.
    assert max(abs(v) for v in fit.dcml_mean) < 2.0

    # Errors surface as Python exceptions.
    try:
        dcml_py.fit_regression([[1.0], [2.0]], [1.0, 2.0, 3.0], "LS")
    except (ValueError, RuntimeError):
        pass
    else:
        raise AssertionError("shape mismatch should raise")

    print("smoke test passed")


if __name__ == "__main__":
    main()
