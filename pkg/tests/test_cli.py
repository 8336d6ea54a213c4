import json
import subprocess
import sys

import numpy as np
import pytest

from tdf.cli import main
from tdf.geometry import TangentVector, embed_tangent, make_base
from tdf.tensor import elementary_tensor, tensor_from_dict, write_tensor
from tdf.tucker import TuckerTensor, random_tucker, write_tucker


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else None)


@pytest.fixture
def fixtures(tmp_path, rng):
    base = random_tucker(rng, (4, 3, 4), (2, 2, 2), orthonormal=False)
    paths = {"base": tmp_path / "base.json", "g": tmp_path / "g.json"}
    write_tucker(base, paths["base"])
    write_tensor(rng.standard_normal((4, 3, 4)), paths["g"])
    return paths, base


def test_rank(tmp_path, capsys, rng):
    path = tmp_path / "t.json"
    write_tensor(elementary_tensor([rng.standard_normal(n) + 2 for n in (2, 3, 4)]), path)
    assert run(capsys, "rank", path) == (0, {"ranks": [1, 1, 1], "tol": 1e-10})
    write_tensor(np.zeros((2, 2, 2)), path)
    assert run(capsys, "rank", path)[1]["ranks"] == [0, 0, 0]
    write_tensor(random_tucker(rng, (4, 5, 4), (2, 3, 2), orthonormal=False).to_dense(), path)
    assert run(capsys, "rank", path)[1]["ranks"] == [2, 3, 2]


def test_rank_errors(tmp_path, capsys):
    assert run(capsys, "rank", tmp_path / "missing.json")[0] == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"dims": [2, 2], "data": [1.0]}')
    assert run(capsys, "rank", bad)[0] == 3


def test_hosvd(tmp_path, capsys, rng):
    path, out = tmp_path / "t.json", tmp_path / "u.json"
    t = random_tucker(rng, (4, 4, 4), (2, 2, 2)).to_dense()
    write_tensor(t, path)
    code, obj = run(capsys, "hosvd", path, "--rank", "2,2,2", "-o", out)
    assert code == 0 and obj["rank"] == [2, 2, 2] and obj["relative_error"] < 1e-12
    assert run(capsys, "hosvd", path, "--rank", "1,2,4")[0] == 3


def test_project_tangent_input(tmp_path, capsys, fixtures, rng):
    paths, base = fixtures
    b = make_base(base)
    tv = TangentVector(b, rng.standard_normal(b.rank),
                       tuple(w @ rng.standard_normal((w.shape[1], u.shape[1]))
                             for u, w in zip(b.factors, b.complements)))
    g = tmp_path / "tangent.json"
    write_tensor(embed_tangent(tv), g)
    for projector in ("hilbert", "metric", "generalized"):
        code, obj = run(capsys, "project", g, "--base", paths["base"], "--projector", projector, "--p", 1.5)
        assert code == 0
        assert obj["objective"] <= 1e-10


def test_project_p2_metric_matches_hilbert(capsys, fixtures):
    paths, _ = fixtures
    _, hil = run(capsys, "project", paths["g"], "--base", paths["base"])
    code, met = run(capsys, "project", paths["g"], "--base", paths["base"], "--projector", "metric", "--p", 2)
    assert code == 0
    for key in ("dC",):
        np.testing.assert_allclose(tensor_from_dict(met["tangent"][key]), tensor_from_dict(hil["tangent"][key]), atol=1e-8)
    for x, y in zip(met["tangent"]["dU"], hil["tangent"]["dU"]):
        np.testing.assert_allclose(x["data"], y["data"], atol=1e-8)


def test_project_infeasible_tolerance(capsys, fixtures):
    paths, _ = fixtures
    code, obj = run(capsys, "project", paths["g"], "--base", paths["base"], "--projector", "metric",
                    "--p", 1.5, "--tol", 1e-16)
    assert code == 4
    assert obj["converged"] is False and obj["duality_residual"] > 1e-16


def test_project_shape_mismatch(tmp_path, capsys, fixtures, rng):
    paths, _ = fixtures
    g = tmp_path / "small.json"
    write_tensor(rng.standard_normal((4, 3, 3)), g)
    assert run(capsys, "project", g, "--base", paths["base"])[0] == 3


def test_project_non_minimal_base(tmp_path, capsys, fixtures, rng):
    paths, _ = fixtures
    bad = tmp_path / "bad_base.json"
    write_tucker(TuckerTensor(np.ones((2, 2, 2)), tuple(rng.standard_normal((n, 2)) for n in (4, 3, 4))), bad)
    assert run(capsys, "project", paths["g"], "--base", bad)[0] == 3


def test_norms(tmp_path, capsys, rng):
    path = tmp_path / "t.json"
    write_tensor(elementary_tensor([rng.standard_normal(n) for n in (2, 3, 2)]), path)
    code, obj = run(capsys, "norms", path, "--p", 3)
    assert code == 0 and obj["dominated"] is True
    assert abs(obj["ambient"] - obj["injective_lb"]) <= 1e-10 * obj["ambient"]
    m = rng.standard_normal((4, 5))
    write_tensor(m, path)
    code, obj = run(capsys, "norms", path)
    assert obj["injective_lb"] == pytest.approx(np.linalg.svd(m, compute_uv=False)[0], abs=1e-10)
    write_tensor(rng.standard_normal((3, 3, 3)), path)
    code, obj = run(capsys, "norms", path, "--p", 1.5, "--restarts", 3)
    assert code == 0 and obj["dominated"] is True


def write_config(tmp_path, **cfg):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_evolve_identity_preset(tmp_path, capsys):
    cfg = write_config(tmp_path, problem="identity", shape=[3, 3, 2], seed=4,
                       integrator={"T": 1.0, "dt": 0.05})
    code, obj = run(capsys, "evolve", "--config", cfg)
    assert code == 0 and obj["method"] == "hartree"
    assert abs(obj["final_lambda"] - np.e) / np.e <= 10 * 0.05**4


def test_evolve_laplacian_exact_rank(tmp_path, capsys):
    cfg = write_config(tmp_path, problem="kronecker-laplacian", shape=[5, 5, 5], rank=[2, 2, 2],
                       seed=1, integrator={"T": 0.05, "dt": 1e-3})
    code, obj = run(capsys, "evolve", "--config", cfg)
    assert code == 0 and obj["method"] == "dlra"
    assert obj["terminal_error"] <= 1e-6
    assert obj["max_galerkin_residual"] <= 1e-8


def test_evolve_deterministic_csv(tmp_path, capsys):
    cfg = write_config(tmp_path, problem="random-symmetric", shape=[3, 3, 3], rank=[2, 2, 2],
                       seed=9, integrator={"T": 0.1, "dt": 0.01})
    outs = []
    for k in range(2):
        csv = tmp_path / f"run{k}.csv"
        assert run(capsys, "evolve", "--config", cfg, "--csv", csv)[0] == 0
        outs.append(csv.read_bytes())
    assert outs[0] == outs[1]
    assert outs[0].splitlines()[0].startswith(b"step,t,galerkin_residual")


def test_evolve_seed_env_override(tmp_path, capsys, monkeypatch):
    cfg = write_config(tmp_path, problem="random-symmetric", shape=[3, 3], rank=[1, 1],
                       seed=1, integrator={"T": 0.05, "dt": 0.01})
    monkeypatch.setenv("TDF_SEED", "77")
    code, obj = run(capsys, "evolve", "--config", cfg)
    assert code == 0 and obj["seed"] == 77


def test_evolve_dt_sweep(tmp_path, capsys):
    cfg = write_config(tmp_path, problem="identity", shape=[2, 2], integrator={"T": 1.0, "dt": 0.1})
    code, obj = run(capsys, "evolve", "--config", cfg, "--dt-sweep", 2, "--no-reference")
    assert code == 0 and obj["observed_order"] >= 3.7
    assert "terminal_error" not in obj


def test_evolve_json_dump(tmp_path, capsys):
    cfg = write_config(tmp_path, problem="random-symmetric", shape=[3, 3], rank=[2, 2],
                       integrator={"T": 0.02, "dt": 0.01})
    out = tmp_path / "traj.json"
    assert run(capsys, "evolve", "--config", cfg, "--json", out, "--dump-states")[0] == 0
    obj = json.loads(out.read_text())
    assert len(obj["states"]) == 3 and "core" in obj["states"][0]


def test_evolve_banach_projector(tmp_path, capsys):
    cfg = write_config(tmp_path, problem="random-symmetric", shape=[3, 3, 3], rank=[2, 2, 2],
                       norm={"p": 1.5}, integrator={"T": 0.02, "dt": 0.01, "projector": "metric"})
    code, obj = run(capsys, "evolve", "--config", cfg)
    assert code == 0 and obj["max_galerkin_residual"] <= 1e-8


def test_evolve_operator_file(tmp_path, capsys, rng):
    from tdf.tucker import matrix_to_dict
    m = rng.standard_normal((3, 3))
    op = tmp_path / "op.json"
    op.write_text(json.dumps({"terms": [[matrix_to_dict(m), matrix_to_dict(np.eye(3))]]}))
    cfg = write_config(tmp_path, problem={"file": str(op)}, shape=[3, 3], rank=[1, 1], initial="separable",
                       integrator={"T": 0.1, "dt": 0.01})
    code, obj = run(capsys, "evolve", "--config", cfg)
    assert code == 0 and obj["terminal_error"] <= 1e-8


@pytest.mark.parametrize("cfg", [
    {"problem": "nope", "shape": [2, 2]},
    {"problem": "identity", "shape": [2]},
    {"problem": "identity", "shape": [2, 2], "rank": [1, 2]},
    {"problem": "identity", "shape": [2, 2], "norm": {"p": 1.0}},
    {"problem": "identity", "shape": [2, 2], "integrator": {"dt": -1}},
    {"problem": "identity", "shape": [2, 2], "integrator": {"projector": "oblique"}},
    {"problem": "identity", "shape": [3, 3], "rank": [2, 2], "integrator": {"method": "hartree"}},
])
def test_evolve_invalid_config(tmp_path, capsys, cfg):
    assert run(capsys, "evolve", "--config", write_config(tmp_path, **cfg))[0] == 3


def test_evolve_invalid_json(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text("{oops")
    assert run(capsys, "evolve", "--config", path)[0] == 3
    assert run(capsys, "evolve", "--config", tmp_path / "none.json")[0] == 2


def test_evolve_rank_degeneracy_exit(tmp_path, capsys):
    # a separable initial state has no rank-2 component: HOSVD yields a singular core
    cfg = write_config(tmp_path, problem="identity", shape=[3, 3], rank=[2, 2], initial="separable",
                       integrator={"T": 0.02, "dt": 0.01})
    code, obj = run(capsys, "evolve", "--config", cfg)
    assert code == 5 and obj["error"] == "rank_degeneracy"


def test_module_entry_point(tmp_path):
    path = tmp_path / "t.json"
    write_tensor(np.eye(3), path)
    res = subprocess.run([sys.executable, "-m", "tdf", "rank", str(path)], capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["ranks"] == [3, 3]


def test_shipped_configs_validate():
    from pathlib import Path

    from tdf.cli import load_config

    configs = sorted((Path(__file__).parent.parent / "configs").glob("*.json"))
    assert configs
    for path in configs:
        cfg = load_config(path, {})
        assert cfg["integrator"]["T"] > 0
