import io
import math

import numpy as np
import pytest

from ergodist.errors import ConfigError, EvaluationError, SimulationError
from ergodist.model import DiffusionModel, invariant_cdf
from ergodist.simulate import (
    Path,
    SimConfig,
    derive_substream_seed,
    occupation_mean,
    simulate_path,
    write_path_csv,
)

from oracles import ks_critical_value, ks_statistic


def frozen_model(x0_scale: float = 1e-12) -> DiffusionModel:
    return DiffusionModel(
        drift=lambda x: 0.0,
        diffusion=lambda x: x0_scale,
        diffusion_sq=lambda x: x0_scale**2,
        label="frozen",
    )


class TestSimConfig:
    def test_valid(self):
        cfg = SimConfig(horizon_T=10.0, dt=0.01, seed=1)
        assert cfg.n_steps == 1000
        assert cfg.effective_T == pytest.approx(10.0)

    def test_bad_dt(self):
        with pytest.raises(ConfigError):
            SimConfig(horizon_T=1.0, dt=2.0, seed=1)

    def test_non_multiple_horizon(self):
        with pytest.raises(ConfigError) as err:
            SimConfig(horizon_T=1.0, dt=0.3, seed=1)
        assert "multiple" in str(err.value)

    def test_bad_init_string(self):
        with pytest.raises(ConfigError):
            SimConfig(horizon_T=1.0, dt=0.1, seed=1, init="equilibrium")

    def test_burn_in_only_for_fixed_init(self):
        with pytest.raises(ConfigError):
            SimConfig(horizon_T=1.0, dt=0.1, seed=1, init="stationary", burn_in_T=1.0)


class TestSubstreamSeeds:
    def test_deterministic(self):
        assert derive_substream_seed(42, 7) == derive_substream_seed(42, 7)

    def test_distinct_indices(self):
        assert derive_substream_seed(42, 0) != derive_substream_seed(42, 1)

    def test_no_collisions_at_desk_scale(self):
        seeds = {derive_substream_seed(123456789, k) for k in range(10**5)}
        assert len(seeds) == 10**5

    def test_negative_index_rejected(self):
        with pytest.raises(ValueError):
            derive_substream_seed(1, -1)

    def test_64_bit_range(self):
        s = derive_substream_seed(2**63, 3)
        assert 0 <= s < 2**64


class TestSimulatePath:
    def test_frozen_dynamics(self):
        cfg = SimConfig(horizon_T=1.0, dt=0.01, seed=5, init=3.0)
        path = simulate_path(frozen_model(), cfg)
        assert np.all(np.abs(path.values - 3.0) < 1e-6)

    def test_bit_identical_replay(self, ou):
        cfg = SimConfig(horizon_T=2.0, dt=0.01, seed=99, init="stationary", store_wiener=True)
        a = simulate_path(ou, cfg)
        b = simulate_path(ou, cfg)
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.wiener_increments, b.wiener_increments)

    def test_mean_reversion_from_far_start(self, ou):
        # transition law N(x0*exp(-T), (1-exp(-2T))/2): |X_T| < 3 is ~4.2 sd
        inside = 0
        for seed in range(100):
            cfg = SimConfig(horizon_T=10.0, dt=0.01, seed=seed, init=10.0)
            path = simulate_path(ou, cfg)
            if abs(path.values[-1]) < 3.0:
                inside += 1
        assert inside >= 99

    def test_explosion_reports_step(self):
        blowup = DiffusionModel(drift=lambda x: x**3, diffusion=lambda x: 1.0,
                                diffusion_sq=lambda x: 1.0, label="blowup")
        with pytest.raises(SimulationError) as err:
            simulate_path(blowup, SimConfig(horizon_T=50.0, dt=0.5, seed=3, init=3.0))
        assert err.value.step_index >= 0

    def test_wiener_increments_shape_and_variance(self, ou):
        cfg = SimConfig(horizon_T=40.0, dt=0.01, seed=11, init=0.0, store_wiener=True)
        path = simulate_path(ou, cfg)
        assert len(path.wiener_increments) == path.n_steps
        assert path.wiener_increments.var() == pytest.approx(0.01, rel=0.1)

    def test_path_reconstruction_from_increments(self, ou):
        # X_{i+1} - X_i should equal S(X_i) dt + sigma(X_i) dW_i exactly
        cfg = SimConfig(horizon_T=1.0, dt=0.01, seed=17, init=0.5, store_wiener=True)
        p = simulate_path(ou, cfg)
        left = p.values[:-1]
        recon = left + (-left) * 0.01 + p.wiener_increments
        assert np.array_equal(p.values[1:], recon)

    def test_burn_in_changes_start(self, ou):
        base = SimConfig(horizon_T=1.0, dt=0.01, seed=4, init=10.0)
        burned = SimConfig(horizon_T=1.0, dt=0.01, seed=4, init=10.0, burn_in_T=5.0)
        a = simulate_path(ou, base)
        b = simulate_path(ou, burned)
        assert a.values[0] == 10.0
        assert abs(b.values[0]) < 5.0  # burned in toward the stationary bulk

    def test_stationary_marginal_matches_invariant_law(self, ou):
        # KS distance of X_T over 500 stationary paths vs F_S below the 1%
        # critical value (T small keeps the discretization error tiny)
        finals = []
        for k in range(500):
            cfg = SimConfig(horizon_T=1.0, dt=0.01, seed=derive_substream_seed(77, k))
            finals.append(simulate_path(ou, cfg).values[-1])
        d = ks_statistic(np.asarray(finals), lambda v: invariant_cdf(ou, v))
        assert d < ks_critical_value(500, 0.01)


class TestOccupationMean:
    def test_constant_path_identity(self):
        path = Path(dt=0.5, values=np.full(11, 2.0))
        assert occupation_mean(path, lambda z: z) == pytest.approx(2.0)

    def test_normalization(self, ou):
        cfg = SimConfig(horizon_T=3.0, dt=0.01, seed=2)
        path = simulate_path(ou, cfg)
        assert occupation_mean(path, lambda z: 1.0) == pytest.approx(1.0)

    def test_nonfinite_g_rejected(self):
        path = Path(dt=0.5, values=np.full(4, 2.0))
        with pytest.raises(EvaluationError):
            occupation_mean(path, lambda z: math.inf)

    @pytest.mark.slow
    def test_ergodic_average_of_square(self, ou):
        # batch of 20 seeds at T=200: occupation mean of z^2 near E[z^2] = 1/2
        vals = []
        for k in range(20):
            cfg = SimConfig(horizon_T=200.0, dt=0.01, seed=derive_substream_seed(5, k))
            vals.append(occupation_mean(simulate_path(ou, cfg), lambda z: z * z))
        assert abs(float(np.mean(vals)) - 0.5) < 0.05

    @pytest.mark.slow
    def test_ergodic_error_shrinks_with_horizon(self, ou):
        errs = {}
        for T in (50.0, 200.0):
            vals = []
            for k in range(20):
                cfg = SimConfig(horizon_T=T, dt=0.01, seed=derive_substream_seed(6, k))
                vals.append(occupation_mean(simulate_path(ou, cfg), lambda z: z * z))
            errs[T] = abs(float(np.mean(vals)) - 0.5)
        assert errs[200.0] < errs[50.0]


class TestPathCsv:
    def test_layout_with_increments(self, ou):
        cfg = SimConfig(horizon_T=0.03, dt=0.01, seed=8, init=1.0, store_wiener=True)
        path = simulate_path(ou, cfg)
        buf = io.StringIO()
        write_path_csv(path, buf)
        lines = buf.getvalue().strip().splitlines()
        assert lines[0] == "t,x,dW"
        assert len(lines) == 5  # header + n+1 grid points
        assert lines[-1].endswith(",")  # final row has an empty dW field
        first = lines[1].split(",")
        assert float(first[0]) == 0.0 and float(first[1]) == 1.0
        assert float(first[2]) == path.wiener_increments[0]

    def test_layout_without_increments(self, ou):
        cfg = SimConfig(horizon_T=0.02, dt=0.01, seed=8, init=1.0)
        buf = io.StringIO()
        write_path_csv(simulate_path(ou, cfg), buf)
        lines = buf.getvalue().strip().splitlines()
        assert lines[0] == "t,x"
        assert len(lines) == 4
