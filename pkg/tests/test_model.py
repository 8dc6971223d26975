import math

import numpy as np
import pytest

from ergodist.errors import DivergenceError, TailError
from ergodist.model import (
    DiffusionModel,
    check_ergodicity,
    invariant_cdf,
    invariant_density,
    invariant_quantile,
    model_from_spec,
    normalizing_constant,
    ornstein_uhlenbeck,
    scale_exponent,
    scale_function,
    shifted_ou,
    stationary_expectation,
)
from ergodist.numerics import QuadratureSpec, integrate_line

from oracles import growing_exponential_integral, ou_invariant_cdf


class TestScaleExponent:
    def test_zero_range(self, ou):
        assert scale_exponent(ou, 0.0) == 0.0

    def test_ou_unit(self, ou):
        # 2 * int_0^1 (-v) dv = -1, polynomial primitive
        assert scale_exponent(ou, 1.0) == pytest.approx(-1.0, abs=1e-12)

    def test_ou_negative_range(self, ou):
        assert scale_exponent(ou, -2.0) == pytest.approx(-4.0, abs=1e-12)

    def test_closed_form_matches_quadrature(self):
        # custom clone of the same drift goes through the quadrature path
        clone = DiffusionModel(
            drift=lambda x: -x,
            diffusion=lambda x: 1.0,
            diffusion_sq=lambda x: 1.0,
            label="ou-clone",
        )
        for y in (-2.0, -0.7, 0.3, 1.5):
            assert scale_exponent(clone, y) == pytest.approx(-y * y, abs=1e-10)


class TestScaleFunction:
    def test_zero(self, ou, quartic):
        assert scale_function(ou, 0.0) == 0.0
        assert scale_function(quartic, 0.0) == 0.0

    def test_ou_value_vs_series(self, ou):
        target = growing_exponential_integral(1.0)
        assert scale_function(ou, 1.0) == pytest.approx(target, rel=1e-10)

    @pytest.mark.parametrize("x", [0.5, 1.0, 2.0])
    def test_ou_odd_symmetry(self, ou, x):
        assert scale_function(ou, -x) == pytest.approx(-scale_function(ou, x), rel=1e-10)


class TestNormalizingConstant:
    def test_ou_sqrt_pi(self, ou):
        assert normalizing_constant(ou) == pytest.approx(math.sqrt(math.pi), abs=1e-8)

    def test_quartic_self_consistent_at_two_tolerances(self, quartic):
        tight = normalizing_constant(quartic)
        loose = integrate_line(
            lambda y: math.exp(-0.5 * y**4),
            QuadratureSpec(abs_tol=1e-6, rel_tol=1e-6, tail_tol=1e-8),
        ).value
        assert tight == pytest.approx(loose, abs=1e-5)
        assert tight > 0.0

    def test_null_drift_diverges(self):
        flat = DiffusionModel(drift=lambda x: 0.0, diffusion=lambda x: 1.0,
                              diffusion_sq=lambda x: 1.0, label="flat")
        with pytest.raises(DivergenceError):
            normalizing_constant(flat)

    def test_repelling_drift_diverges(self):
        rep = DiffusionModel(drift=lambda x: x, diffusion=lambda x: 1.0,
                             diffusion_sq=lambda x: 1.0, label="repelling",
                             scale_exponent_closed=lambda y: y * y)
        with pytest.raises(DivergenceError):
            normalizing_constant(rep)


class TestInvariantDensity:
    def test_ou_at_zero(self, ou):
        assert invariant_density(ou, 0.0) == pytest.approx(1.0 / math.sqrt(math.pi), abs=1e-8)

    @pytest.mark.parametrize("y", [0.3, 1.7])
    def test_ou_even(self, ou, y):
        assert invariant_density(ou, y) == pytest.approx(invariant_density(ou, -y), rel=1e-12)

    def test_normalized(self, ou):
        total = integrate_line(lambda y: invariant_density(ou, y)).value
        assert total == pytest.approx(1.0, abs=1e-8)

    def test_nonnegative_on_grid(self, quartic):
        for y in np.linspace(-4, 4, 41):
            assert invariant_density(quartic, float(y)) >= 0.0


class TestInvariantCdf:
    def test_ou_median(self, ou):
        assert invariant_cdf(ou, 0.0) == pytest.approx(0.5, abs=1e-9)

    def test_ou_vs_gaussian_oracle(self, ou):
        assert invariant_cdf(ou, 1.0) == pytest.approx(ou_invariant_cdf(1.0), abs=1e-8)

    def test_far_left_tail(self, ou):
        assert invariant_cdf(ou, -12.0) < 1e-10

    def test_far_right_tail(self, ou):
        assert invariant_cdf(ou, 12.0) > 1.0 - 1e-10

    def test_nondecreasing_on_grid(self, ou, quartic):
        for model in (ou, quartic):
            vals = [invariant_cdf(model, float(x)) for x in np.linspace(-6, 6, 121)]
            assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_clamped_to_unit_interval(self, ou):
        for x in np.linspace(-20, 20, 41):
            assert 0.0 <= invariant_cdf(ou, float(x)) <= 1.0


class TestInvariantQuantile:
    def test_median(self, ou):
        assert invariant_quantile(ou, 0.5) == pytest.approx(0.0, abs=1e-8)

    def test_inverse_of_cdf_oracle(self, ou):
        assert invariant_quantile(ou, 0.9213504) == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize("u", [0.1, 0.5, 0.99])
    def test_round_trip(self, ou, u):
        x = invariant_quantile(ou, u)
        assert invariant_cdf(ou, x) == pytest.approx(u, abs=1e-9)

    def test_invalid_level_rejected(self, ou):
        with pytest.raises(ValueError):
            invariant_quantile(ou, 0.0)
        with pytest.raises(ValueError):
            invariant_quantile(ou, 1.5)

    def test_deeper_than_truncation_raises_tail_error(self, ou):
        with pytest.raises(TailError):
            invariant_quantile(ou, 1e-80)


class TestStationaryExpectation:
    def test_total_mass(self, ou):
        assert stationary_expectation(ou, lambda z: 1.0) == pytest.approx(1.0, abs=1e-8)

    def test_odd_integrand(self, ou):
        assert stationary_expectation(ou, lambda z: z) == pytest.approx(0.0, abs=1e-8)

    def test_second_moment(self, ou):
        assert stationary_expectation(ou, lambda z: z * z) == pytest.approx(0.5, abs=1e-8)

    def test_divergent_moment(self, ou):
        with pytest.raises(DivergenceError):
            stationary_expectation(ou, lambda z: math.exp(z * z))


class TestDerivativeIdentity:
    """d/dy [sigma^2(y) f(y)] = 2 S(y) f(y), by central differences."""

    @pytest.mark.parametrize("model_name", ["ou", "quartic"])
    def test_identity_on_grid(self, model_name, ou, quartic):
        model = {"ou": ou, "quartic": quartic}[model_name]
        h = 1e-4
        for y in np.linspace(-2.0, 2.0, 9):
            y = float(y)
            lhs = (
                float(model.diffusion_sq(y + h)) * invariant_density(model, y + h)
                - float(model.diffusion_sq(y - h)) * invariant_density(model, y - h)
            ) / (2.0 * h)
            rhs = 2.0 * float(model.drift(y)) * invariant_density(model, y)
            assert lhs == pytest.approx(rhs, abs=1e-5)


class TestCheckErgodicity:
    def test_ou_all_flags(self, ou):
        rep = check_ergodicity(ou, 1.0)
        assert rep.es_ok and rep.vs_diverges and rep.g_finite
        assert rep.g_value == pytest.approx(math.sqrt(math.pi), abs=1e-8)
        assert rep.all_ok()

    def test_null_drift(self):
        flat = DiffusionModel(drift=lambda x: 0.0, diffusion=lambda x: 1.0,
                              diffusion_sq=lambda x: 1.0, label="flat")
        rep = check_ergodicity(flat, 1.0)
        assert rep.vs_diverges  # V(x) = x still diverges
        assert not rep.g_finite

    def test_repelling_drift(self):
        rep_model = DiffusionModel(drift=lambda x: x, diffusion=lambda x: 1.0,
                                   diffusion_sq=lambda x: 1.0, label="repelling",
                                   scale_exponent_closed=lambda y: y * y)
        rep = check_ergodicity(rep_model, 1.0)
        assert not rep.g_finite
        assert math.isnan(rep.g_value)

    def test_probe_points_reported(self, ou):
        rep = check_ergodicity(ou, 0.5)
        assert rep.probe_points == [0.5 * 2.0**k for k in range(7)]


class TestCatalog:
    def test_model_from_spec_round_trip(self):
        model = model_from_spec({"family": "ou", "params": {"theta": 2.0, "s": 0.5}})
        assert model.sigma_const == 0.5
        assert model.spec == {"family": "ou", "params": {"theta": 2.0, "s": 0.5}}

    def test_unknown_family_rejected(self):
        with pytest.raises(ValueError):
            model_from_spec({"family": "levy", "params": {}})

    def test_bad_params_rejected(self):
        with pytest.raises(ValueError):
            model_from_spec({"family": "ou", "params": {"volatility": 2.0}})

    def test_shifted_ou_centered_at_m(self):
        model = shifted_ou(1.5)
        med = invariant_quantile(model, 0.5)
        assert med == pytest.approx(1.5, abs=1e-8)

    def test_ou_scaled_params(self):
        # theta=2, s=1: invariant law N(0, 1/4)
        model = ornstein_uhlenbeck(theta=2.0)
        assert stationary_expectation(model, lambda z: z * z) == pytest.approx(0.25, abs=1e-8)

    def test_custom_clone_matches_catalog(self, ou):
        clone = DiffusionModel(drift=lambda x: -x, diffusion=lambda x: 1.0,
                               diffusion_sq=lambda x: 1.0, label="ou-clone")
        assert normalizing_constant(clone) == pytest.approx(normalizing_constant(ou), rel=1e-9)
        for x in (-1.0, 0.0, 0.7):
            assert invariant_cdf(clone, x) == pytest.approx(invariant_cdf(ou, x), abs=1e-8)

    def test_quartic_density_vs_exact_form(self, quartic):
        g = normalizing_constant(quartic)
        for y in (-1.0, 0.0, 0.5):
            assert invariant_density(quartic, y) == pytest.approx(
                math.exp(-0.5 * y**4) / g, rel=1e-10
            )
