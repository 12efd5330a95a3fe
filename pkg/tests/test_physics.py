"""Potential, truncation, and noise operator contracts."""

import math

import numpy as np
import pytest

from choc import (
    ConfigurationError,
    DomainError,
    Field,
    ShapeError,
    TruncationLevel,
    additive_noise,
    apply_B,
    apply_DB,
    apply_DB_adjoint,
    double_well,
    inner_h,
    mean,
    multiplicative_noise,
    norm_h,
    psi_eval,
    psi_second_truncated,
    quadratic_potential,
    validate_assumptions,
)
from choc.physics import NO_TRUNCATION, Potential, no_noise

from conftest import random_field


# --- potential -------------------------------------------------------------


def test_double_well_at_origin():
    pot = double_well()
    assert psi_eval(pot, 0.0, 0) == pytest.approx(0.25)
    assert psi_eval(pot, 0.0, 1) == 0.0
    assert psi_eval(pot, 0.0, 2) == pytest.approx(-1.0)


@pytest.mark.parametrize("r", [1.0, -1.0])
def test_double_well_minima(r):
    pot = double_well()
    assert psi_eval(pot, r, 0) == pytest.approx(0.0)
    assert psi_eval(pot, r, 1) == pytest.approx(0.0)
    assert psi_eval(pot, r, 2) == pytest.approx(2.0)


def test_psi_derivatives_match_finite_differences(rng):
    # oracle: centered difference quotient, O(eps^2)
    for pot in (double_well(), quadratic_potential(1.7)):
        for r in rng.uniform(-3, 3, size=10):
            eps = 1e-5
            fd1 = (psi_eval(pot, r + eps, 0) - psi_eval(pot, r - eps, 0)) / (2 * eps)
            fd2 = (psi_eval(pot, r + eps, 1) - psi_eval(pot, r - eps, 1)) / (2 * eps)
            assert fd1 == pytest.approx(psi_eval(pot, r, 1), rel=1e-7, abs=1e-7)
            assert fd2 == pytest.approx(psi_eval(pot, r, 2), rel=1e-7, abs=1e-7)


def test_psi_eval_rejects_bad_order():
    with pytest.raises(DomainError):
        psi_eval(double_well(), 0.0, 3)


# --- truncation ------------------------------------------------------------


def test_truncation_clamps():
    pot = double_well()
    assert psi_second_truncated(pot, 3.0, 2.0) == 2.0           # T_2(26) = 2
    assert psi_second_truncated(pot, 0.0, 5.0) == -1.0          # inside the band
    assert psi_second_truncated(pot, -4.0, 10.0) == 10.0


def test_truncation_infinite_is_identity(rng):
    pot = double_well()
    r = rng.uniform(-50, 50, size=10_000)
    exact = psi_eval(pot, r, 2)
    clamped = psi_second_truncated(pot, r, math.inf)
    assert np.array_equal(exact, clamped)


def test_truncation_monotone_consistency(rng):
    pot = double_well()
    r = float(rng.uniform(-3, 3))
    exact = psi_eval(pot, r, 2)
    prev = None
    for n in (0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0):
        val = psi_second_truncated(pot, r, n)
        if prev is not None:
            assert abs(val - exact) <= abs(prev - exact)
        if n >= abs(exact):
            assert val == exact
        prev = val


def test_truncation_level_validation():
    with pytest.raises(DomainError):
        TruncationLevel(0.0)
    with pytest.raises(DomainError):
        TruncationLevel(-3.0)
    assert not NO_TRUNCATION.finite


# --- assumption validation ---------------------------------------------------


def test_validate_default_well_passes():
    report = validate_assumptions(double_well(c1=1.0, c2=3.0))
    assert report.ok
    assert report.worst_margins["curvature_lower_bound"]["margin"] >= 0


def test_validate_fails_with_understated_c1():
    report = validate_assumptions(double_well(c1=0.5, c2=3.0))
    assert not report.ok
    names = [v[0] for v in report.violations]
    assert "curvature_lower_bound" in names
    violation = dict((v[0], v) for v in report.violations)["curvature_lower_bound"]
    assert violation[1] == pytest.approx(0.0, abs=1e-2)   # witness near r = 0
    assert violation[2] == pytest.approx(-0.5, abs=1e-3)  # margin


def test_validate_fails_sextic_growth():
    sextic = Potential(
        name="sextic",
        psi=lambda r: np.asarray(r, dtype=float) ** 6,
        psi_prime=lambda r: 6.0 * np.asarray(r, dtype=float) ** 5,
        psi_second=lambda r: 30.0 * np.asarray(r, dtype=float) ** 4,
        c1=0.0,
        c2=1.0,
    )
    report = validate_assumptions(sextic)
    assert not report.ok
    assert "curvature_growth" in [v[0] for v in report.violations]


def test_validate_needs_samples():
    with pytest.raises(DomainError):
        validate_assumptions(double_well(), nsamples=1)


# --- noise operator ----------------------------------------------------------


def test_additive_rejects_constant_mode(grid64):
    with pytest.raises(ConfigurationError):
        additive_noise(grid64, [0.1], mode_indices=[(0,)])
    nm = additive_noise(grid64, [0.1], mode_indices=[(0,)],
                        allow_nonzero_mean_modes=True)
    assert nm.nmodes == 1


def test_linear_shape_needs_override(grid64):
    with pytest.raises(ConfigurationError):
        multiplicative_noise(grid64, [0.1], shape="linear")
    nm = multiplicative_noise(grid64, [0.1], shape="linear",
                              allow_linear_shape=True)
    assert nm.shape_name == "linear"


def test_apply_B_zero_increment(grid64, rng):
    nm = multiplicative_noise(grid64, [0.1, 0.2])
    y = random_field(grid64, rng)
    out = apply_B(nm, 0.0, y, np.zeros(2))
    assert np.all(out.values == 0.0)


def test_apply_B_additive_single_mode(grid64, rng):
    nm = additive_noise(grid64, [0.3], mode_indices=[(2,)])
    y = random_field(grid64, rng)
    out = apply_B(nm, 0.0, y, np.array([1.0]))
    assert np.allclose(out.values, 0.3 * grid64.cosine_mode((2,)), atol=1e-14)


def test_apply_B_multiplicative_zero_state(grid64):
    # tanh(0) = 0, so the modulated modes vanish
    nm = multiplicative_noise(grid64, [0.5, 0.5])
    out = apply_B(nm, 0.0, Field.zeros(grid64), np.array([1.0, -2.0]))
    assert np.max(np.abs(out.values)) == 0.0


def test_apply_B_shape_error(grid64, rng):
    nm = multiplicative_noise(grid64, [0.1, 0.1])
    with pytest.raises(ShapeError):
        apply_B(nm, 0.0, random_field(grid64, rng), np.zeros(3))


def test_multiplicative_mean_free(grid64, grid2d, rng):
    for g in (grid64, grid2d):
        nm = multiplicative_noise(g, [0.4, 0.2, 0.1])
        for _ in range(20):
            y = random_field(g, rng)
            dw = rng.standard_normal(3)
            out = apply_B(nm, 0.0, y, dw)
            assert abs(mean(out)) <= 1e-12


def test_k0_reproduces_deterministic(grid64, rng):
    nm = no_noise(grid64)
    y = random_field(grid64, rng)
    out = apply_B(nm, 0.0, y, np.zeros(0))
    assert np.all(out.values == 0.0)


def test_db_additive_zero(grid64, rng):
    nm = additive_noise(grid64, [0.1, 0.1])
    y, z = random_field(grid64, rng), random_field(grid64, rng)
    out = apply_DB(nm, 0.0, y, z, rng.standard_normal(2))
    assert np.all(out.values == 0.0)
    adj = apply_DB_adjoint(nm, 0.0, y, [y, z])
    assert np.all(adj.values == 0.0)


def test_db_linear_in_direction(grid64, rng):
    nm = multiplicative_noise(grid64, [0.3, 0.1])
    y = random_field(grid64, rng)
    out = apply_DB(nm, 0.0, y, Field.zeros(grid64), rng.standard_normal(2))
    assert np.all(out.values == 0.0)


def test_db_adjoint_identity(grid64, grid2d, rng):
    # oracle: both inner products evaluated directly
    for g in (grid64, grid2d):
        nm = multiplicative_noise(g, [0.4, 0.2, 0.7])
        for _ in range(10):
            y = random_field(g, rng)
            z = random_field(g, rng)
            q = [random_field(g, rng) for _ in range(3)]
            lhs = 0.0
            for k in range(3):
                ek = np.zeros(3)
                ek[k] = 1.0
                lhs += inner_h(apply_DB(nm, 0.0, y, z, ek), q[k])
            rhs = inner_h(z, apply_DB_adjoint(nm, 0.0, y, q))
            scale = norm_h(z) * max(norm_h(qk) for qk in q)
            assert abs(lhs - rhs) <= 1e-12 * max(scale, 1.0)


def test_lipschitz_certificate(grid64, rng):
    # 1000 random pairs stay under the constructed constant
    nm = multiplicative_noise(grid64, [0.4, 0.2])
    for _ in range(1000):
        y1 = random_field(grid64, rng)
        y2 = random_field(grid64, rng)
        hs_sq = 0.0
        for k in range(2):
            ek = np.zeros(2)
            ek[k] = 1.0
            d = apply_B(nm, 0.0, y1, ek) - apply_B(nm, 0.0, y2, ek)
            hs_sq += norm_h(d) ** 2
        assert np.sqrt(hs_sq) <= nm.l_b * norm_h(y1 - y2) * (1 + 1e-12)


def test_db_directional_derivative(grid64, rng):
    # |(B(y+eps z) - B(y))/eps - DB(y)z| = O(eps)
    nm = multiplicative_noise(grid64, [0.4, 0.2])
    y = random_field(grid64, rng)
    z = random_field(grid64, rng)
    dw = rng.standard_normal(2)
    db = apply_DB(nm, 0.0, y, z, dw)
    errors = []
    for eps in (1e-2, 1e-3, 1e-4):
        bumped = apply_B(nm, 0.0, Field(grid64, y.values + eps * z.values), dw)
        base = apply_B(nm, 0.0, y, dw)
        quotient = (bumped.values - base.values) / eps
        errors.append(norm_h(Field(grid64, quotient - db.values)))
    assert errors[0] > errors[1] > errors[2]
    assert errors[2] <= 1e-3 * max(norm_h(db), 1.0)
