import json

import numpy as np
import pytest

from memkernel import container
from memkernel.cli import ConfigError, main, parse_config
from memkernel.tensornet import TensorSet, choi_to_superop, superop_to_choi
from memkernel.ttm import MapFamily

from conftest import random_cptp

BASE = """
[model]
alpha = 0.3
omega_c = 2.0
kT = 0.5
num_modes = 1
fock_cutoff = 3
omega_max = 2.0
mode_damping = 3.0
[grid]
dt = 0.1
horizon = 12
memory_cutoff = 6
"""


def write(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_parse_defaults_and_alias():
    cfg = parse_config({"nonmarkov": {"n": 8, "m": 2, "lambda": 3}})
    assert cfg.nonmarkov.repetitions == 3.0
    assert cfg.grid.memory_cutoff <= cfg.grid.horizon


@pytest.mark.parametrize("doc,field", [
    ({"grid": {"horizon": 3, "memory_cutoff": 5}}, "grid.horizon"),
    ({"grid": {"dt": -0.1}}, "grid.dt"),
    ({"spectrum": {"omega_points": 1}}, "spectrum.omega_points"),
    ({"model": {"alpha": -1.0}}, "model"),
    ({"model": {"bogus": 1}}, "model.bogus"),
    ({"grid": {"horizon": "ten"}}, "grid.horizon"),
    ({"task": "plot"}, "task"),
    ({"initial_state": [[1, 0], [0, 1]]}, "initial_state"),
])
def test_invalid_configs_name_the_field(doc, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        parse_config(doc)


def test_invalid_config_exit_code(tmp_path, capsys):
    path = write(tmp_path, BASE.replace("horizon = 12", "horizon = 3"))
    assert main(["maps", "--config", path, "--out", str(tmp_path / "o")]) == 2
    assert "grid.horizon" in capsys.readouterr().err
    assert main(["maps", "--config", write(tmp_path, "[grid\n", "bad.toml")]) == 2


def test_maps_kernels_propagate_pipeline(tmp_path):
    cfg = write(tmp_path, BASE)
    out = tmp_path / "maps"
    assert main(["maps", "--config", cfg, "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert len(man["kernel_norms"]) == 12 and man["checks"]["trace_preservation_defect"] < 1e-10
    assert len(man["config_sha256"]) == 64
    kcfg = write(tmp_path, BASE + f'[io]\nmaps = "{out / "maps.json"}"\n', "k.toml")
    assert main(["kernels", "--config", kcfg, "--out", str(tmp_path / "k")]) == 0
    kman = json.loads((tmp_path / "k" / "manifest.json").read_text())
    assert kman["checks"]["round_trip_error"] < 1e-12
    pcfg = write(tmp_path, BASE + f'[io]\nkernels = "{tmp_path / "k" / "kernels.json"}"\n', "p.toml")
    assert main(["propagate", "--config", pcfg, "--out", str(tmp_path / "p")]) == 0
    # propagated maps stay within the recorded error bounds of the exact maps
    report = main(["diff", str(out / "maps.json"), str(tmp_path / "p" / "propagated.json"), "--tolerance", "10"])
    assert report == 0
    exact = container.load(out / "maps.json")
    prop = container.load(tmp_path / "p" / "propagated.json")
    bounds = dict((n, b) for n, b in json.loads((tmp_path / "p" / "manifest.json").read_text())["checks"]["error_bounds"])
    for (n,), t in exact.items():
        assert np.linalg.norm(t.matrix - prop[(n,)].matrix) <= bounds[n] + 1e-12


def test_kernels_of_single_map(tmp_path, rng):
    e1 = random_cptp(rng)
    path = container.save(tmp_path / "one.json", MapFamily(0.1, [e1.matrix]).to_tensor_set())
    cfg = write(tmp_path, f'[grid]\nhorizon = 1\nmemory_cutoff = 1\n[io]\nmaps = "{path}"\n')
    assert main(["kernels", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    ker = container.load(tmp_path / "o" / "kernels.json")
    assert np.array_equal(choi_to_superop(ker[(1,)]).matrix, e1.matrix)


def test_binary_output(tmp_path):
    cfg = write(tmp_path, BASE + '[io]\nformat = "binary"\n')
    assert main(["maps", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "b" / "maps.ltns").read_bytes().startswith(b"LTNS1")


def test_outputs_are_deterministic(tmp_path):
    cfg = write(tmp_path, BASE)
    for d in ("a", "b"):
        assert main(["kernels", "--config", cfg, "--out", str(tmp_path / d)]) == 0
    for name in ("kernels.json", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_spectrum_task_shares_grid(tmp_path):
    spec = "[spectrum]\nomega_points = 41\ntau_max = 15.0\nregression = {}\n"
    for flag in ("true", "false"):
        cfg = write(tmp_path, BASE + spec.format(flag), f"s_{flag}.toml")
        assert main(["spectrum", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    cols = []
    for tag in ("regression", "full"):
        lines = (tmp_path / "s" / f"spectrum_{tag}.csv").read_text().splitlines()
        assert lines[0] == "omega,S"
        cols.append([ln.split(",")[0] for ln in lines])
    assert cols[0] == cols[1]


def test_run_uses_config_task_and_nonmarkov(tmp_path):
    cfg = write(tmp_path, 'task = "nonmarkov"\n' + BASE + "[nonmarkov]\nn = 8\nm = 2\nlambda = 2.0\nsweep = true\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "nm")]) == 0
    lines = (tmp_path / "nm" / "nonmarkov.csv").read_text().splitlines()
    assert lines[0] == "n,m,N,confusion" and len(lines) == 7
    assert main(["run", "--config", write(tmp_path, BASE, "nt.toml")]) == 2


def test_numeric_and_size_exit_codes(tmp_path):
    undamped = BASE.replace("mode_damping = 3.0", "mode_damping = 0.0")
    spec = "[spectrum]\ntau_max = 2.0\nsteady_tol = 1e-16\n"
    cfg = write(tmp_path, undamped + spec)
    assert main(["spectrum", "--config", cfg, "--out", str(tmp_path / "x")]) == 3
    big = BASE.replace("num_modes = 1", "num_modes = 8")
    assert main(["maps", "--config", write(tmp_path, big, "big.toml"), "--out", str(tmp_path / "y")]) == 4


def test_diff_reports(tmp_path, rng, capsys):
    ts = TensorSet({(1,): superop_to_choi(random_cptp(rng), 1, 0)}, {"dt": 0.1})
    a = container.save(tmp_path / "a.json", ts)
    assert main(["diff", str(a), str(a)]) == 0
    assert json.loads(capsys.readouterr().out)["max"] == 0.0
    other = TensorSet({(1,): superop_to_choi(random_cptp(rng), 1, 0)}, {"dt": 0.1})
    b = container.save(tmp_path / "b.json", other)
    assert main(["diff", str(a), str(b), "--tolerance", "1e-12"]) == 1
    three = TensorSet({(1,): superop_to_choi(random_cptp(rng, d=3), 1, 0)}, {"dt": 0.1})
    c = container.save(tmp_path / "c.json", three)
    assert main(["diff", str(a), str(c)]) == 2
