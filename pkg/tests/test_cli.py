import csv
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from streamyolo import data_path
from streamyolo.cli import main
from streamyolo.tensorfile import read_int_tensors, write_int_tensors

from conftest import FIXTURES, platform_file


def net(name):
    return str(data_path("networks", f"{name}.json"))


ZCU = str(platform_file("zcu104"))


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def load(path):
    return json.loads(path.read_text())


def test_flow_full_v5n(tmp_path, capsys):
    code, _, err = run(capsys, "flow", "--network", net("yolov5n"), "--platform", ZCU, "--out-dir", tmp_path)
    assert code == 0, err
    for name in ("design.json", "depths.json", "perf_report.json", "perf_report.csv", "memory.svg",
                 "latency.svg", "summary.json", "weights.satq", "quantization.json", "manifest.json"):
        assert (tmp_path / name).exists(), name
    s = load(tmp_path / "summary.json")
    assert s["dsp_used"] <= s["dsp_total"] == 1728
    assert load(tmp_path / "depths.json")["source"] == "analytic"
    m = load(tmp_path / "manifest.json")
    assert m["command"] == "flow" and "memory.svg" in m["artifacts"] and m["config_hash"] == s["config_hash"]


def test_flow_small_simulates_depths(tmp_path, capsys):
    code, _, err = run(capsys, "flow", "--network", net("yolov3-tiny-small"), "--platform", ZCU,
                       "--out-dir", tmp_path)
    assert code == 0, err
    d = load(tmp_path / "depths.json")
    assert d["source"] == "simulated" and set(d["depths"]) == {"leak14->conc30", "resi29->conc30"}


def test_missing_platform(tmp_path, capsys):
    missing = tmp_path / "nope.toml"
    code, _, err = run(capsys, "flow", "--network", net("yolov5n"), "--platform", missing, "--out-dir", tmp_path)
    assert code == 2
    assert err.startswith("error[parse]:") and str(missing) in err


def test_infeasible_budget(tmp_path, capsys):
    code, _, err = run(capsys, "dse", "--network", net("yolov5n-small"), "--platform",
                       FIXTURES / "tiny_platform.toml", "--out-dir", tmp_path)
    assert code == 3 and err.startswith("error[dse]:") and "infeasible" in err


def test_bad_network(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"nodes": [{"id": "a", "kind": "Softmax"}]}')
    code, _, err = run(capsys, "validate", "--network", bad, "--out-dir", tmp_path)
    assert code == 2 and err.startswith("error[parse]:") and len(err.strip().splitlines()) == 1


def test_validate(tmp_path, capsys):
    code, _, _ = run(capsys, "validate", "--network", net("yolov3-tiny"), "--out-dir", tmp_path)
    assert code == 0 and load(tmp_path / "validation.json")["valid"]


def test_quantize(tmp_path, capsys):
    code, _, _ = run(capsys, "quantize", "--network", net("yolov3-tiny-small"), "--w-bits", 4,
                     "--out-dir", tmp_path)
    q = load(tmp_path / "quantization.json")
    assert code == 0 and q["w_w"] == 4
    assert all(r["max_abs_error"] <= r["scale"] / 2 + 1e-9 for r in q["layers"].values())


def test_ablation(tmp_path, capsys):
    code, _, err = run(capsys, "ablation", "--network", net("yolov5n"), "--platform", ZCU,
                       "--top-k", 5, "--out-dir", tmp_path)
    assert code == 0, err
    lines = (tmp_path / "ablation.csv").read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    rows = list(csv.DictReader(lines[1:]))
    assert [int(r["k"]) for r in rows] == list(range(6))
    skip = [int(r["mem_skip"]) for r in rows]
    assert all(b <= a for a, b in zip(skip, skip[1:]))
    # the k = 0 row is the all-on design
    flow_dir = tmp_path / "flow"
    run(capsys, "flow", "--network", net("yolov5n"), "--platform", ZCU, "--out-dir", flow_dir)
    s = load(flow_dir / "summary.json")
    assert int(rows[0]["mem_total"]) == s["memory_bits_all_on"]
    assert int(rows[0]["mem_skip"]) == s["skip_bits_all_on"]
    assert (tmp_path / "ablation.svg").exists()


def test_ablation_warns_on_few_edges(tmp_path, capsys):
    code, _, err = run(capsys, "ablation", "--network", net("yolov3-tiny"), "--platform", ZCU,
                       "--top-k", 5, "--out-dir", tmp_path)
    assert code == 0 and "warning[ablation]" in err
    assert len((tmp_path / "ablation.csv").read_text().splitlines()) == 2 + 3


def test_simulate_check(tmp_path, capsys):
    x = np.random.default_rng(3).integers(-3000, 3000, size=(16, 20, 1))
    write_int_tensors(tmp_path / "x.sati", {"x": x})
    code, out, err = run(capsys, "simulate", "--network", FIXTURES / "starve_net.json", "--design",
                         FIXTURES / "fork_design.json", "--input", tmp_path / "x.sati", "--check",
                         "--out-dir", tmp_path)
    assert code == 0, err
    assert "outputs match" in out
    sim = load(tmp_path / "simulation.json")
    assert not sim["deadlocked"] and sim["depths"]["in->cat"] >= 44
    outs = read_int_tensors(tmp_path / "outputs.sati")
    assert np.array_equal(outs["out"][:, :, 0], x[:, :, 0])
    assert (tmp_path / "occupancy.csv").read_text().splitlines()[1] == "cycle,channel,occupancy"


def test_simulate_small_fixture(tmp_path, capsys):
    design = tmp_path / "design"
    assert run(capsys, "dse", "--network", net("yolov3-tiny-small"), "--platform", ZCU,
               "--out-dir", design)[0] == 0
    code, out, err = run(capsys, "simulate", "--network", net("yolov3-tiny-small"), "--design",
                         design / "design.json", "--check", "--out-dir", tmp_path)
    assert code == 0 and "outputs match" in out, err


def test_simulate_missing_p(tmp_path, capsys):
    code, _, err = run(capsys, "simulate", "--network", FIXTURES / "starve_net.json", "--design",
                       FIXTURES / "missing_p_design.json", "--out-dir", tmp_path)
    assert code == 2 and err.startswith("error[parse]:") and "out" in err


def test_simulate_deadlock(tmp_path, capsys):
    code, _, err = run(capsys, "simulate", "--network", FIXTURES / "starve_net.json", "--design",
                       FIXTURES / "starve_design.json", "--out-dir", tmp_path)
    assert code == 4
    assert "error[simulate]: deadlock" in err and "in->cat: 2/2 words (full)" in err
    assert load(tmp_path / "simulation.json")["deadlocked"]


def test_bad_input_shape(tmp_path, capsys):
    write_int_tensors(tmp_path / "x.sati", {"x": np.zeros((2, 2, 1), dtype=np.int64)})
    code, _, err = run(capsys, "simulate", "--network", FIXTURES / "starve_net.json", "--design",
                       FIXTURES / "fork_design.json", "--input", tmp_path / "x.sati", "--out-dir", tmp_path)
    assert code == 2 and err.startswith("error[simulate]:")


def test_depths_and_report(tmp_path, capsys):
    assert run(capsys, "depths", "--network", net("yolov5n-small"), "--method", "analytic",
               "--out-dir", tmp_path)[0] == 0
    assert run(capsys, "dse", "--network", net("yolov5n-small"), "--platform", ZCU, "--depths",
               tmp_path / "depths.json", "--out-dir", tmp_path / "d")[0] == 0
    code, _, err = run(capsys, "report", "--network", net("yolov5n-small"), "--platform", ZCU, "--design",
                       tmp_path / "d" / "design.json", "--depths", tmp_path / "depths.json",
                       "--out-dir", tmp_path / "r")
    assert code == 0, err
    rep = load(tmp_path / "r" / "perf_report.json")
    assert rep["dsp_used"] <= 1728
    assert (tmp_path / "r" / "perf_report.csv").read_text().startswith("# config_hash=")


def test_determinism(tmp_path, capsys):
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        assert run(capsys, "flow", "--network", net("yolov3-tiny-small"), "--platform", ZCU,
                   "--out-dir", d)[0] == 0
    names = sorted(p.name for p in dirs[0].iterdir())
    assert names == sorted(p.name for p in dirs[1].iterdir())
    for name in names:
        a, b = (d / name for d in dirs)
        if name == "manifest.json":
            ma, mb = load(a), load(b)
            ma.pop("timings_s"), mb.pop("timings_s")
            ma["config"].pop("out_dir", None), mb["config"].pop("out_dir", None)
            assert ma == mb
        else:
            assert a.read_bytes() == b.read_bytes(), name


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "streamyolo", "validate", "--network", net("yolov3-tiny-small"),
                        "--out-dir", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr


@pytest.mark.skipif(shutil.which("streamyolo") is None, reason="console script not installed")
def test_console_script(tmp_path):
    r = subprocess.run(["streamyolo", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip()
