import json
import os

import numpy as np
import pytest

import rcgff.environment as env
import rcgff.lab as lab
from rcgff.domains import unit_square


def test_kgrid_constraints():
    kg = lab.build_kgrid(unit_square(2), eps=0.2, delta=0.3, grid=10)
    assert len(kg) == 228
    sep = np.linalg.norm(kg.pairs[:, 0] - kg.pairs[:, 1], axis=1)
    assert (sep >= 0.2 * (1 - 1e-9)).all()
    dom = unit_square(2)
    assert (dom.boundary_distance(kg.pairs.reshape(-1, 2))
            >= 0.3 * (1 - 1e-9)).all()


def test_kgrid_rejects_bad_parameters():
    with pytest.raises(env.ParameterError):
        lab.build_kgrid(unit_square(2), eps=0.4, delta=0.3, grid=10)
    with pytest.raises(env.ParameterError):
        lab.build_kgrid(unit_square(2), eps=0.45, delta=0.49, grid=4)


def test_config_validation():
    with pytest.raises(env.ParameterError):
        lab.ExperimentConfig(eps=0.3, delta=0.2)
    with pytest.raises(env.ParameterError):
        lab.ExperimentConfig(n_ladder=(16, 16))
    with pytest.raises(env.ParameterError):
        lab.ExperimentConfig(n_ladder=(32, 16))
    cfg = lab.ExperimentConfig(n_ladder=(8, 16))
    assert cfg.domain().dim == 2


def test_parse_helpers():
    assert lab._parse_box("50,50") == (50, 50)
    assert lab._parse_box("8x16") == (8, 16)
    assert lab._parse_ladder("16,32,64") == (16, 32, 64)


def test_config_file_overrides_flags(tmp_path):
    cfile = tmp_path / "run.cfg"
    cfile.write_text("seed = 99\nn-ladder = 4,8  # small ladder\n")
    parser = lab._build_parser()
    args = parser.parse_args(["gen", "--seed", "1", "--config", str(cfile)])
    cfg = lab.config_from_args(args)
    assert cfg.seed == 99
    assert cfg.n_ladder == (4, 8)


def test_config_file_rejects_garbage(tmp_path):
    cfile = tmp_path / "bad.cfg"
    cfile.write_text("this is not a key value line\n")
    with pytest.raises(env.ParameterError):
        lab._read_config_file(str(cfile))


def test_cli_parameter_error_exit_code(tmp_path):
    rc = lab.main(["lclt", "--eps", "0.5", "--delta", "0.3",
                   "--out", str(tmp_path)])
    assert rc == 2
    rc = lab.main(["gen", "--law", "nosuch(1)", "--out", str(tmp_path)])
    assert rc == 2


def test_cli_degenerate_environment_exit_code(tmp_path):
    rc = lab.main(["ondiag2d", "--law", "bernoulli(0)",
                   "--n-ladder", "4,8", "--out", str(tmp_path)])
    assert rc == 4


def test_cli_gen_writes_outputs(tmp_path):
    rc = lab.main(["gen", "--law", "exponential(1)", "--box", "12,12",
                   "--seed", "5", "--out", str(tmp_path)])
    assert rc == 0
    assert (tmp_path / "field.csv").exists()
    manifest = json.loads((tmp_path / "gen_manifest.json").read_text())
    assert manifest["law"] == "exponential(1)"
    assert manifest["seed"] == 5


def test_cli_gen_deterministic(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    for out in (out1, out2):
        assert lab.main(["gen", "--law", "exponential(1)", "--box", "10,10",
                         "--seed", "3", "--out", str(out)]) == 0
    assert (out1 / "field.csv").read_bytes() == (out2 / "field.csv").read_bytes()


def test_variance_limit_experiment_small(tmp_path):
    cfg = lab.ExperimentConfig(experiment="var-limit", n_ladder=(8, 16),
                               out=str(tmp_path), seed=0)
    lab.variance_limit_experiment(cfg)
    lines = (tmp_path / "var_limit.csv").read_text().strip().split("\n")
    assert lines[0] == "n,variance,limit,ratio"
    ratios = [float(l.split(",")[3]) for l in lines[1:]]
    # already within a few percent of the limit at small n
    assert abs(ratios[-1] - 1.0) < 0.05
    manifest = json.loads((tmp_path / "var_limit_manifest.json").read_text())
    assert manifest["theta"] == 1.0


def test_lclt_experiment_small(tmp_path):
    cfg = lab.ExperimentConfig(experiment="lclt", n_ladder=(8, 16),
                               grid=4, eps=0.2, delta=0.25,
                               out=str(tmp_path), seed=0)
    lab.lclt_experiment(cfg)
    lines = (tmp_path / "lclt.csv").read_text().strip().split("\n")
    assert len(lines) == 3
    sups = [float(l.split(",")[4]) for l in lines[1:]]
    assert sups[1] <= sups[0]


def test_exit_bound_experiment_small(tmp_path):
    cfg = lab.ExperimentConfig(experiment="exit-bound", n_ladder=(8, 16),
                               out=str(tmp_path), seed=0)
    lab.exit_bound_experiment(cfg)
    rows = (tmp_path / "exit_bound.csv").read_text().strip().split("\n")[1:]
    assert all(float(r.split(",")[3]) > 0 for r in rows)


def test_figure1_outputs(tmp_path):
    cfg = lab.ExperimentConfig(experiment="figure1", size=16,
                               out=str(tmp_path), seed=2)
    lab.figure1(cfg)
    assert (tmp_path / "figure1.svg").exists()
    for name in ("constant", "exp_iid", "exp_line"):
        path = tmp_path / f"figure1_{name}.csv"
        body = path.read_text().strip().split("\n")[1:]
        coords = np.array([[int(v) for v in l.split(",")[:2]] for l in body])
        # no boundary pixels: all interior coordinates
        assert coords.min() >= 1 and coords.max() <= 15


def test_figure1_deterministic(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    for out in (out1, out2):
        cfg = lab.ExperimentConfig(experiment="figure1", size=12,
                                   out=str(out), seed=4)
        lab.figure1(cfg)
    a = (out1 / "figure1_exp_iid.csv").read_bytes()
    b = (out2 / "figure1_exp_iid.csv").read_bytes()
    assert a == b
