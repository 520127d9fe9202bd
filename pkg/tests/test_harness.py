import logging
import math

import meshio
import numpy as np
import pytest

from app.config import EXPERIMENT_CONFIG, load_experiment_file
from app.repositories.mesh_repository import MeshRepository
from app.repositories.report_repository import ReportRepository
from app.services.fields import bubble_rotation
from app.services.harness import (
    ExperimentConfig,
    convection_demo,
    convergence_study,
    fit_order,
    oracle_check,
    pseudo_mode_errors,
    run_experiment,
    solve_experiment,
)
from app.services.mesh import generate_quarter_disk
from app.services.schemes import EXPLICIT, REGULARIZED2, REGULARIZED2_CONVECTION
from app.utils.errors import ConfigError

TABLE2_LEVEL2 = (0.01521770, 0.00784386, 0.00398968, 0.00203974)
TABLE3_N100 = {1.0: 0.00267418, 10.0: 0.00398968, 100.0: 0.00447231}


def quick(**overrides):
    """Level-1 experiment small enough for the default test run."""
    values = dict(mesh_level=1, mu=10.0, t_final=0.25, scheme=REGULARIZED2, n_steps=5, k_pseudo=10,
                  integrator="cn", sqrt_backend="pseudo_parabolic")
    values.update(overrides)
    return ExperimentConfig(**values)


def table2(**overrides):
    values = dict(mesh_level=2, mu=10.0, t_final=0.25, sigma=0.25, scheme=REGULARIZED2, k_pseudo=100,
                  integrator="cn", sqrt_backend="pseudo_parabolic")
    values.update(overrides)
    return ExperimentConfig(**values)


class TestExperimentConfig:
    def test_from_mapping_rejects_unknown_keys(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_mapping({"mesh_level": 1, "colour": "blue"})

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(mesh_level=None),
            dict(mesh_file="/nonexistent/mesh.txt"),
            dict(t_final=-0.1),
            dict(t_final=float("nan")),
            dict(mu=0.0),
        ],
    )
    def test_invalid_values(self, kwargs):
        with pytest.raises(ConfigError):
            ExperimentConfig(**kwargs)

    def test_overrides_skip_none_and_mesh_file_replaces_level(self, tmp_path, mesh1):
        path = tmp_path / "level1.txt"
        MeshRepository.save(mesh1, path)
        base = quick()
        assert base.with_overrides(mu=None, n_steps=7).n_steps == 7
        assert base.with_overrides(mu=None).mu == 10.0
        from_file = base.with_overrides(mesh_file=str(path))
        assert from_file.mesh_level is None
        assert from_file.grid_label == str(path)
        assert base.grid_label == "level1"

    def test_scheme_config_spans_interval(self):
        cfg = quick(n_steps=50, t_final=0.25).scheme_config()
        assert cfg.tau == pytest.approx(0.005)
        assert cfg.frac.K == 10 and cfg.frac.integrator == "crank_nicolson"


class TestExperimentFile:
    def test_table_and_top_level_keys(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text('mu = 1.0\nscheme = "explicit"\n\n[experiment]\nmu = 100.0\nn_steps = 40\n')
        values = load_experiment_file(path)
        assert values == {"mu": 100.0, "scheme": "explicit", "n_steps": 40}
        assert ExperimentConfig.from_mapping(values).n_steps == 40

    def test_errors(self, tmp_path):
        with pytest.raises(ConfigError):
            load_experiment_file(tmp_path / "missing.toml")
        broken = tmp_path / "broken.toml"
        broken.write_text("mu = \n")
        with pytest.raises(ConfigError):
            load_experiment_file(broken)
        extra = tmp_path / "extra.toml"
        extra.write_text("[solver]\ntol = 1e-8\n")
        with pytest.raises(ConfigError):
            load_experiment_file(extra)


def test_fit_order():
    ns = [25, 50, 100, 200]
    assert fit_order(ns, [1.0 / n for n in ns]) == pytest.approx(1.0)
    assert fit_order(ns, [1.0 / n**2 for n in ns]) == pytest.approx(2.0)
    # error floor after the second point
    assert fit_order(ns, [0.04, 0.02, 0.03, 0.03]) == pytest.approx(1.0)
    assert fit_order([25], [0.1]) is None
    assert fit_order(ns, [0.0, 0.0, 0.0, 0.0]) is None


def test_initial_projection_error_is_small():
    report = run_experiment(quick(mesh_level=3, t_final=0.0, n_steps=0))
    assert report.eps2 <= 1e-2
    assert report.n_vertices == 41 * 41


def test_report_fields():
    result = solve_experiment(quick())
    report = result.report
    assert report.grid == "level1"
    assert (report.n_vertices, report.n_cells) == (121, 200)
    assert report.integrator == "crank_nicolson"
    assert report.cg_iterations > 0 and report.pseudo_iterations > 0
    assert math.isfinite(report.eps2) and math.isfinite(report.eps_inf)
    assert "wall_time" not in report.as_row()
    assert "wall_time" in report.as_row(include_timing=True)
    assert len(result.trajectory) == 6


def test_reports_are_reproducible(tmp_path):
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    run_experiment(quick(out=str(first)))
    run_experiment(quick(out=str(second)))
    assert first.read_bytes() == second.read_bytes()


def test_outputs_are_written(tmp_path):
    cfg = quick(
        out=str(tmp_path / "report.csv"),
        vtk=str(tmp_path / "final.vtk"),
        dump_matrices=str(tmp_path / "matrices"),
        trajectory_csv=str(tmp_path / "steps.csv"),
    )
    run_experiment(cfg)
    assert (tmp_path / "report.csv").read_text().startswith("eps2,eps_inf,grid")
    grid = meshio.read(tmp_path / "final.vtk")
    assert grid.points.shape == (121, 3)
    assert grid.cells_dict["triangle"].shape == (200, 3)
    assert grid.point_data["w"].shape == (121,)
    assert np.isfinite(grid.point_data["w"]).all()
    assert (tmp_path / "matrices" / "mass.mtx").is_file()
    assert (tmp_path / "matrices" / "stiffness.mtx").is_file()
    assert not (tmp_path / "matrices" / "convection.mtx").exists()
    steps = (tmp_path / "steps.csv").read_text().splitlines()
    assert steps[0] == "n,t,m_norm,g_norm,cg_iters,pseudo_iters"
    assert len(steps) == 7


def test_vtk_field_reads_back(tmp_path, mesh1, rng):
    values = rng.standard_normal(mesh1.n_vertices)
    ReportRepository.save_vtk(mesh1, values, tmp_path / "field.vtk", name="u")
    grid = meshio.read(tmp_path / "field.vtk")
    np.testing.assert_allclose(grid.points[:, :2], mesh1.vertices, rtol=1e-12)
    np.testing.assert_array_equal(grid.points[:, 2], 0.0)
    np.testing.assert_array_equal(grid.cells_dict["triangle"], mesh1.triangles)
    np.testing.assert_allclose(grid.point_data["u"], values, rtol=1e-12)


def test_vtk_rejects_wrong_field_length(tmp_path, mesh1):
    with pytest.raises(ConfigError):
        ReportRepository.save_vtk(mesh1, np.zeros(5), tmp_path / "field.vtk")


def test_failures_carry_experiment_note():
    with pytest.raises(ConfigError) as info:
        solve_experiment(quick(sigma=-1.0))
    assert any(note.startswith("experiment:") for note in info.value.__notes__)


def test_single_step_count_study():
    study = convergence_study(quick(), [5])
    assert study.ok
    assert len(study.reports) == 1
    assert study.order is None


def test_study_keeps_failed_entries():
    cfg = quick(scheme=EXPLICIT, sqrt_backend="spectral", t_final=1e80)
    with np.errstate(over="ignore", invalid="ignore"):
        study = convergence_study(cfg, [4, 2])
    assert study.n_list == (2, 4)
    assert [r.n_steps for r in study.reports] == [2]
    code, message = study.failures[4]
    assert code == 3
    assert "step" in message and "experiment:" in message
    assert not study.ok


def test_study_rejects_empty_step_list():
    with pytest.raises(ConfigError):
        convergence_study(quick(), [])


def test_zero_velocity_matches_pure_diffusion():
    plain = run_experiment(quick(sqrt_backend="spectral", n_steps=10))
    convective = run_experiment(quick(sqrt_backend="spectral", n_steps=10, scheme=REGULARIZED2_CONVECTION, velocity="zero"))
    assert convective.eps2 == pytest.approx(plain.eps2, abs=1e-10)


def test_convection_demo_energy_decays(mesh1):
    demo = convection_demo(quick(t_final=2.0, n_steps=200, sqrt_backend="spectral"))
    assert demo.skew_exact
    assert demo.non_increasing
    assert len(demo.g_norms) == 201
    assert demo.report.scheme == REGULARIZED2_CONVECTION
    assert len(demo.m_norms) == 201
    boundary = mesh1.vertices[mesh1.boundary_vertex_mask]
    assert np.abs(bubble_rotation()(boundary)).max() <= 1e-14


def test_convection_demo_without_oracle_on_large_mesh(monkeypatch, caplog):
    monkeypatch.setitem(EXPERIMENT_CONFIG, "oracle_max_dim", 50)
    with caplog.at_level(logging.WARNING, logger="app.services.harness"):
        demo = convection_demo(quick(t_final=0.1, n_steps=4))
    assert demo.g_norms is None
    assert demo.non_increasing is None
    assert len(demo.m_norms) == 5
    assert np.isfinite(demo.m_norms).all()
    assert any("skipping G-norm" in record.getMessage() for record in caplog.records)


def test_pseudo_time_error_on_solution_modes():
    coarse = {mu: pseudo_mode_errors(quick(mu=mu, k_pseudo=100)) for mu in (1.0, 10.0, 100.0)}
    fine = {mu: pseudo_mode_errors(quick(mu=mu, k_pseudo=400)) for mu in (1.0, 10.0, 100.0)}
    # Crank-Nicolson overshoots D^{-1/2} on the fast mode, more so for larger mu
    fast = [max(coarse[mu].items())[1] for mu in sorted(coarse)]
    assert all(0.002 <= err <= 0.01 for err in fast)
    assert fast == sorted(fast)
    for mu in fine:
        assert 0.0 < max(fine[mu].items())[1] <= max(coarse[mu].items())[1] / 8
        assert abs(min(coarse[mu].items())[1]) <= 1e-4


def test_coarse_pseudo_grid_is_reported(caplog):
    with caplog.at_level(logging.WARNING, logger="app.services.harness"):
        solve_experiment(quick(t_final=0.01, n_steps=4, k_pseudo=100))
    assert any("pseudo-time error" in record.getMessage() for record in caplog.records)
    caplog.clear()
    with caplog.at_level(logging.WARNING, logger="app.services.harness"):
        solve_experiment(quick(t_final=0.01, n_steps=4, k_pseudo=400))
    assert not any("pseudo-time error" in record.getMessage() for record in caplog.records)


@pytest.mark.parametrize("integrator, low, high", [("cn", 3.3, 4.7), ("be", 1.7, 2.3)])
def test_oracle_check(integrator, low, high):
    check = oracle_check(quick(k_pseudo=100, integrator=integrator, seed=7), n_samples=5)
    if integrator == "cn":
        assert check.max_relative_error <= 1e-3
    assert sorted(check.errors_by_k) == [50, 100]
    assert low <= check.halving_ratio <= high


@pytest.mark.slow
class TestPublishedTables:
    def test_level2_errors_within_band(self):
        study = convergence_study(table2(), [25, 50, 100, 200])
        assert study.ok
        for report, published in zip(study.reports, TABLE2_LEVEL2):
            assert published / 3 <= report.eps2 <= 3 * published
            assert math.isfinite(report.eps_inf)
        assert study.is_monotone()

    def test_errors_per_mu_within_band(self):
        errors = {}
        for mu, published in TABLE3_N100.items():
            errors[mu] = run_experiment(table2(mu=mu, n_steps=100)).eps2
            assert published / 3 <= errors[mu] <= 3 * published

    # at K = 100 the pseudo-time error on the fast mode is a fifth of the N = 100 time error
    @pytest.mark.parametrize("backend, k_pseudo", [("pseudo_parabolic", 400), ("spectral", 100)])
    def test_errors_grow_with_mu(self, backend, k_pseudo):
        errors = [
            run_experiment(table2(mu=mu, n_steps=100, sqrt_backend=backend, k_pseudo=k_pseudo)).eps2
            for mu in sorted(TABLE3_N100)
        ]
        assert errors[0] < errors[1] < errors[2]

    def test_fine_grid_ratios(self):
        study = convergence_study(table2(mesh_level=3), [25, 50, 100])
        eps = study.eps2
        for coarse, fine in zip(eps[:2], eps[1:]):
            assert 1.6 <= coarse / fine <= 2.4


def test_generated_level_counts_match_reports():
    mesh = generate_quarter_disk(2)
    report = run_experiment(quick(mesh_level=2, n_steps=1))
    assert (report.n_vertices, report.n_cells) == (mesh.n_vertices, mesh.n_triangles)
