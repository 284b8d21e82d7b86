import io
import json

import numpy as np
import pytest

from fracpredict.errors import ConfigError, DomainError, FracPredictError
from fracpredict.harness import (
    ExperimentConfig,
    build_exact_predictor,
    compare_exact_vs_nn,
    data_section,
    evaluate_me_mse,
    parse_config,
    read_sweep,
    run_convergence_study,
    run_experiment,
    run_table_sweep,
    simulate_test_paths,
    template_cells,
    write_comparison_csv,
)
from fracpredict.nn import TrainingConfig

SMALL = TrainingConfig(n_batches=40, batch_size=256)


def small(**kw):
    base = dict(N=8, n_test=4000, arch=(16, 16), train=SMALL, seed=3)
    base.update(kw)
    return ExperimentConfig(**base)


class TestMetrics:
    def test_perfect_and_shifted(self):
        assert evaluate_me_mse([1.0, 2.0], [1.0, 2.0]) == (0.0, 0.0, 0.0)
        me, mse, se = evaluate_me_mse([1.0, 2.0, 5.0], [2.0, 3.0, 6.0])
        assert (me, mse, se) == (1.0, 1.0, 0.0)

    def test_two_pass_oracle(self, rng):
        p, t = rng.normal(size=1001), rng.normal(size=1001)
        me, mse, se = evaluate_me_mse(p, t)
        n = len(p)
        s1 = s2 = 0.0
        for a, b in zip(p, t):
            s1 += b - a
            s2 += (b - a) ** 2
        mean_sq = s2 / n
        acc = 0.0
        for a, b in zip(p, t):
            acc += ((b - a) ** 2 - mean_sq) ** 2
        np.testing.assert_allclose([me, mse, se], [s1 / n, mean_sq, (acc / (n - 1) / n) ** 0.5],
                                   rtol=1e-12, atol=1e-15)

    def test_empty(self):
        with pytest.raises(DomainError):
            evaluate_me_mse([], [])


class TestConfig:
    def test_defaults_and_grid(self):
        cfg = ExperimentConfig()
        assert cfg.train.seed == cfg.seed
        np.testing.assert_allclose(cfg.observation_times.points[[0, -1]], [5 / 32, 5.0])
        assert cfg.test_grid().step() == pytest.approx(5 / 32)

    @pytest.mark.parametrize("kw", [dict(N=0), dict(s=10.0), dict(n_test=50), dict(H=1.2),
                                    dict(process="heston"), dict(T=10.1), dict(arch=())])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            ExperimentConfig(**kw)

    def test_parse(self):
        cfg = parse_config("process = fou\nH = 0.3\narch = 8, 8\n")
        assert (cfg.process, cfg.H, cfg.arch) == ("fou", 0.3, (8, 8))
        cfg = parse_config("[experiment]\nseed = 9\n[training]\nn_batches = 7\n")
        assert cfg.seed == 9 and cfg.train.n_batches == 7 and cfg.train.seed == 9
        with pytest.raises(ConfigError):
            parse_config("colour = red\n")
        with pytest.raises(ConfigError):
            parse_config("[training]\nn_batches = many\n")


@pytest.fixture(scope="module")
def sbm():
    return run_experiment(small(H=0.5))


class TestRunExperiment:
    def test_sbm_exact_row(self, sbm):
        ex = sbm.row("EXACT")
        assert abs(ex.mse - 5.0) < 4 * ex.se_mse
        assert sbm.theoretical_mse == pytest.approx(5.0)
        assert sbm.methods == ["NN", "EXACT"]

    def test_exact_not_beaten(self, sbm):
        assert sbm.row("EXACT").mse <= sbm.row("NN").mse + 3 * sbm.row("NN").se_mse

    def test_jensen(self, sbm):
        for r in sbm.rows:
            assert r.mse >= r.me ** 2 - 1e-12

    def test_report_csv(self, sbm):
        buf = io.StringIO()
        sbm.write_csv(buf)
        lines = buf.getvalue().splitlines()
        assert json.loads(lines[0][len("# config: "):])["H"] == 0.5
        assert lines[1].startswith("# wall_time_s: ")
        assert lines[2] == "method,ME,MSE,SE_MSE,SE_ME,theoretical_mse"

    def test_deterministic(self, sbm):
        a, b = io.StringIO(), io.StringIO()
        sbm.write_csv(a)
        run_experiment(small(H=0.5)).write_csv(b)
        assert data_section(a.getvalue()) == data_section(b.getvalue())

    def test_test_paths_ignore_training_budget(self):
        a = run_experiment(small(), methods=("EXACT",))
        b = run_experiment(small(train=TrainingConfig(n_batches=5, batch_size=64)), methods=("EXACT",))
        np.testing.assert_array_equal(a.row("EXACT").errors, b.row("EXACT").errors)

    def test_continuous_row_for_fine_grids(self):
        rep = run_experiment(small(N=16), methods=("EXACT", "CONTINUOUS"))
        assert rep.methods == ["EXACT", "CONTINUOUS"]
        assert rep.row("CONTINUOUS").mse >= rep.row("EXACT").mse - 3 * rep.row("EXACT").se_mse

    def test_fcir_structure(self):
        rep = run_experiment(small(process="fcir", H=0.7, sigma=2.0))
        assert rep.methods == ["NN", "EXACT"]
        assert rep.theoretical_mse is None

    @pytest.mark.parametrize("process", ["integral", "fou"])
    def test_exact_matches_theory(self, process):
        rep = run_experiment(small(process=process, integrand="cos", sim_refinement=4),
                             methods=("EXACT",))
        ex = rep.row("EXACT")
        assert abs(ex.mse - rep.theoretical_mse) < 4 * ex.se_mse
        assert abs(ex.me) < 4 * ex.se_me

    def test_stage_tagging(self):
        cfg = small(process="fcir", H=0.4)
        with pytest.raises(FracPredictError) as info:
            run_experiment(cfg, methods=("EXACT",))
        assert "exact" in str(info.value)


class TestSweeps:
    def test_cell_counts(self):
        assert len(template_cells("TABLE1")) == 3 * 3 * 5
        assert len(template_cells("TABLE2")) == 10 * 5
        assert {c["N"] for c in template_cells("table3", "paper")} == {2 ** p for p in range(9, 17)}
        with pytest.raises(ConfigError):
            template_cells("TABLE9")

    def test_single_cell(self):
        text = run_table_sweep("TABLE2", cells=[dict(s=5.0, H=0.5, N=8, T=5.5)], seed=1)
        rows = read_sweep(text)
        assert len(rows) == 1 and rows[0]["status"] == "ok"
        assert len(data_section(text).splitlines()) == 2
        assert float(rows[0]["theoretical_MSE"]) == pytest.approx(0.5)

    def test_error_cells_do_not_abort(self):
        text = run_table_sweep("TABLE1", cells=[dict(s=5.0, H=0.5, N=8, T=10.0),
                                                dict(s=5.0, H=1.5, N=8, T=10.0)], seed=1)
        rows = read_sweep(text)
        assert rows[0]["status"] == "ok"
        assert rows[1]["status"].startswith("error:")

    def test_worker_independence(self):
        cells = [dict(s=5.0, H=h, N=8, T=10.0) for h in (0.3, 0.7)]
        a = run_table_sweep("TABLE1", cells=cells, seed=2, workers=1)
        b = run_table_sweep("TABLE1", cells=cells, seed=2, workers=2)
        assert data_section(a) == data_section(b)


class TestConvergence:
    def test_brownian_gap_vanishes(self):
        res = run_convergence_study("fbm", 0.5, 5.0, 10.0, [16, 64, 256], seed=1, fine_steps=1024)
        np.testing.assert_allclose(res.gap, 0.0, atol=1e-10)

    def test_csv(self):
        res = run_convergence_study("fou", 0.7, 5.0, 10.0, [16, 32], seed=1, fine_steps=512)
        buf = io.StringIO()
        res.write_csv(buf)
        lines = buf.getvalue().splitlines()
        assert json.loads(lines[0][len("# config: "):])["variant"] == "z_argument"
        assert lines[1] == "N,discrete_prediction,continuous_prediction,gap"
        assert len(lines) == 4

    def test_validation(self):
        with pytest.raises(ConfigError):
            run_convergence_study("fbm", 0.7, 5.0, 10.0, [32, 16], seed=1, fine_steps=512)
        with pytest.raises(ConfigError):
            run_convergence_study("fbm", 0.7, 5.0, 10.0, [24], seed=1, fine_steps=512)
        with pytest.raises(ConfigError):
            run_convergence_study("fcir", 0.7, 5.0, 10.0, [16], seed=1, fine_steps=512)


class TestCompare:
    def test_single_row(self):
        rows = compare_exact_vs_nn(small(), [10.0])
        assert len(rows) == 1
        r = rows[0]
        assert r.difference == pytest.approx(r.mse_nn - r.mse_exact)
        assert r.difference >= -3 * r.se_difference
        buf = io.StringIO()
        write_comparison_csv(rows, buf, small())
        assert len(data_section(buf.getvalue()).splitlines()) == 2
