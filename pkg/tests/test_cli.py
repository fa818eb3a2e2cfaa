import json
import subprocess
import sys

from byzlattice.cli import main
from byzlattice.simnet import TRACE_FIELDS


def test_clean_run_exits_zero(tmp_path, capsys):
    out = tmp_path / "r.json"
    code = main(["--n", "6", "--adversary", "equivocator,silent", "--trials", "2", "--out", str(out)])
    assert code == 0
    doc = json.loads(out.read_text())
    assert set(doc) == {"config", "per_trial", "summary"}
    s = doc["summary"]
    for key in ("violations", "max_rounds", "max_messages", "wall_ms"):
        assert key in s
    assert s["violations"] == 0
    # t in {0, 1, 1}: t=0 trials collapse to one adversary
    assert s["trials"] == len(doc["per_trial"]) == 2 + 2 * 2
    assert json.loads(capsys.readouterr().out.strip().splitlines()[-1]) == s


def test_config_errors_exit_two(tmp_path):
    assert main(["--n", "5", "--f", "1"]) == 2  # unauth needs n > 5f
    assert main(["--n", "six"]) == 2
    assert main(["--adversary", "nobody"]) == 2
    assert main(["--variant", "byz"]) == 2
    assert main(["--check", "vibes"]) == 2
    bad = tmp_path / "c.json"
    bad.write_text(json.dumps({"colour": "red"}))
    assert main(["--config", str(bad)]) == 2


def test_config_file_and_overrides(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n": [4], "variant": "auth", "adversary": "fake_slave", "t": "f", "seed": 3}))
    out = tmp_path / "r.json"
    assert main(["--config", str(cfg), "--seed", "5", "--out", str(out)]) == 0
    (trial,) = json.loads(out.read_text())["per_trial"]
    c = trial["config"]
    assert (c["n"], c["variant"], c["adversary"], c["t"], c["seed"]) == (4, "auth", "fake_slave", 1, 5)


def test_mutation_exit_codes():
    assert main(["--mutation", "brb-weak", "--n", "6", "--trials", "5", "--stop-on-violation"]) == 4
    assert main(["brb-enum", "--weak", "--width", "50"]) == 4
    assert main(["brb-enum", "--width", "50"]) == 0


def test_trace_files(tmp_path):
    base = tmp_path / "tr.jsonl"
    assert main(["--n", "6", "--t", "1", "--adversary", "junk_acks", "--trials", "2", "--trace", str(base)]) == 0
    files = sorted(p.name for p in tmp_path.iterdir())
    assert files == ["tr.0.jsonl", "tr.1.jsonl"]
    rec = json.loads((tmp_path / "tr.0.jsonl").read_text().splitlines()[0])
    assert set(rec) == set(TRACE_FIELDS)


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "byzlattice", "--n", "6", "--t", "0"], capture_output=True, text=True, timeout=120
    )
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout.splitlines()[-1])["trials"] == 1
