import numpy as np
import pytest

from twofluid import caseio
from twofluid.caseio import (CaseConfig, SeriesWriter, apply_overrides,
                             build_spaces, dump_config, initial_state,
                             inlet_profiles, parse_config, read_series,
                             read_snapshot, write_snapshot)
from twofluid.errors import ConfigError
from twofluid.mesh import generate_rect_mesh


def test_empty_document_gives_reference_defaults():
    cfg = parse_config("")
    assert cfg.rho_g == 10.0
    assert cfg.rho_l == 1000.0
    assert cfg.mu_g == 2e-5
    assert cfg.mu_l == 5e-3
    assert cfg.d_b == 1e-3
    assert cfg.inlet_peak_velocity == 0.0616
    assert cfg.inlet_peak_alpha == 0.026
    assert cfg.inlet_ramp_time == 0.625
    assert cfg.c_p == 0.25
    assert cfg.bounded is True


def test_parse_sections_comments_and_bool():
    cfg = parse_config("""
[solver]
bounded = false   # comparator run
nx = 10
tol_step = 2e-4
""")
    assert cfg.bounded is False
    assert cfg.nx == 10
    assert cfg.tol_step == 2e-4


def test_unknown_key_rejected_with_line():
    with pytest.raises(ConfigError) as exc:
        parse_config("rho_l = 1000\nbogus_key = 1\n")
    assert "line 2" in str(exc.value)


def test_domain_invalid_value_names_key():
    with pytest.raises(ConfigError) as exc:
        parse_config("rho_l = -1\n")
    assert "rho_l" in str(exc.value)


def test_malformed_line_reports_position():
    with pytest.raises(ConfigError) as exc:
        parse_config("rho_l 1000\n")
    assert "line 1" in str(exc.value)


def test_dump_round_trips():
    cfg = CaseConfig(nx=13, bounded=False, tol_vi=3e-11, diagonal="left",
                     output_dir="elsewhere")
    assert parse_config(dump_config(cfg)) == cfg


def test_overrides():
    cfg = apply_overrides(CaseConfig(), ["nx=8", "bounded=false"])
    assert cfg.nx == 8 and cfg.bounded is False
    with pytest.raises(ConfigError):
        apply_overrides(CaseConfig(), ["nonsense"])
    with pytest.raises(ConfigError):
        apply_overrides(CaseConfig(), ["no_such_key=1"])


def test_inlet_profile_values():
    cfg = CaseConfig()
    v, a = inlet_profiles(0.0, 10.0, cfg)
    assert v == pytest.approx(0.0616)
    assert a == pytest.approx(0.026)
    v, a = inlet_profiles(0.0, 0.0, cfg)
    assert v == 0.0 and a == 0.0
    # half ramp
    v, _ = inlet_profiles(0.0, 0.3125, cfg)
    assert v == pytest.approx(0.0308)
    # edge of the sparger: exp(-50)
    v, _ = inlet_profiles(0.025, 1.0, cfg)
    assert v == pytest.approx(0.0616 * np.exp(-50.0), rel=1e-12)
    assert v < 1e-20


def test_inlet_profile_even_and_monotone():
    cfg = CaseConfig()
    xs = np.linspace(-0.025, 0.025, 11)
    v1, a1 = inlet_profiles(xs, 0.2, cfg)
    v2, _ = inlet_profiles(-xs, 0.2, cfg)
    assert v1 == pytest.approx(v2)
    times = [0.0, 0.2, 0.4, 0.625, 1.0, 5.0]
    vs = [inlet_profiles(0.0, t, cfg)[0] for t in times]
    assert vs == sorted(vs)
    assert vs[-1] == vs[-2] == vs[-3]  # constant after the ramp


def test_initial_state_fields():
    cfg = CaseConfig(nx=4, ny=8)
    mesh = cfg.build_mesh()
    state = initial_state(mesh, cfg)
    assert np.all(state.alpha_g.coefficients == 0.0)
    assert np.all(state.alpha_l.coefficients == 1.0)
    assert np.all(state.v_g.coefficients == 0.0)
    assert np.all(state.v_l.coefficients == 0.0)
    # top of the column is at scaled y = height/x_scale
    p1 = state.p_l.space
    top = np.isclose(p1.node_coords[:, 1], cfg.height / cfg.x_scale)
    assert state.p_l.coefficients[top] == pytest.approx(0.0, abs=1e-14)
    bottom = np.isclose(p1.node_coords[:, 1], 0.0)
    # dimensional pressure at the floor: rho_l g h_ref = 981 Pa
    p_s = cfg.rho_l * cfg.gravity * cfg.h_ref
    assert state.p_l.coefficients[bottom] * p_s == pytest.approx(981.0)


def test_snapshot_round_trip(tmp_path):
    cfg = CaseConfig(nx=3, ny=4)
    mesh = cfg.build_mesh()
    spaces = build_spaces(mesh)
    state = initial_state(mesh, cfg, spaces)
    rng = np.random.default_rng(0)
    state.alpha_g.coefficients[:] = rng.uniform(0.0, 0.03, mesh.n_vertices)
    state.v_g.coefficients[:] = rng.standard_normal(spaces.vec.dof_count)
    path = tmp_path / "snap_000000.vtk"
    write_snapshot(state, mesh, str(path))
    text = path.read_text()
    assert "DATASET UNSTRUCTURED_GRID" in text
    for a, b, c in mesh.cells:
        assert f"3 {a} {b} {c}" in text
    verts, cells, data, meta = read_snapshot(str(path))
    assert verts == pytest.approx(mesh.vertices, abs=1e-15)
    assert np.array_equal(cells, mesh.cells)
    assert data["alpha_g"] == pytest.approx(state.alpha_g.coefficients,
                                            abs=1e-12)
    assert data["v_g"] == pytest.approx(state.v_g.vertex_values(), abs=1e-12)
    assert meta["nx"] == 3


def test_snapshot_zero_state(tmp_path):
    cfg = CaseConfig(nx=1, ny=1, h_ref=0.1)
    mesh = generate_rect_mesh(1.0, 1.0, 1, 1, "right")
    spaces = build_spaces(mesh)
    state = initial_state(mesh, cfg, spaces)
    state.p_l.coefficients[:] = 0.0
    path = tmp_path / "s.vtk"
    write_snapshot(state, mesh, str(path))
    verts, cells, data, _ = read_snapshot(str(path))
    assert verts.shape == (4, 2)
    assert cells.shape == (2, 3)
    assert np.all(data["alpha_g"] == 0.0)
    assert np.all(data["v_l"] == 0.0)


def test_snapshot_deterministic(tmp_path):
    cfg = CaseConfig(nx=3, ny=4)
    mesh = cfg.build_mesh()
    state = initial_state(mesh, cfg)
    a = tmp_path / "a.vtk"
    b = tmp_path / "b.vtk"
    write_snapshot(state, mesh, str(a))
    write_snapshot(state, mesh, str(b))
    assert a.read_bytes() == b.read_bytes()


def test_series_writer(tmp_path):
    path = tmp_path / "series.csv"
    with SeriesWriter(str(path)) as w:
        w.write_row(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1)
        w.write_row(0.1, 0.01, 0.002, -1e-12, 0.026, 0.058, 11.4, 1)
        w.write_row(0.2, 0.01, 0.002, 0.0, 0.026, 0.058, 11.4, 0)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == ("t_seconds,dt_seconds,holdup,min_alpha_g,max_alpha_g,"
                        "slip_velocity_avg_mps,bubble_reynolds_avg,accepted")
    assert all(len(line.split(",")) == 8 for line in lines)
    series = read_series(str(path))
    assert series["holdup"][0] == 0.0
    assert series["accepted"][-1] == 0.0
    assert series["min_alpha_g"][1] == pytest.approx(-1e-12)
