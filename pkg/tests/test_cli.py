import csv
import io
import json
from pathlib import Path

import pytest

from hardy_lp.cli import (
    COLUMNS,
    ConfigError,
    Header,
    Report,
    Row,
    Summary,
    emit,
    load_config,
    main,
    run,
)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

VERIFY_1D = {
    "experiment": "verify",
    "geometry": {"type": "euclidean", "m": 1, "N": 1},
    "instance": {"theorem_id": "SPEC", "params": {"p": 2, "beta": -2}},
}


def _report(rows):
    return Report(header=Header(seed=0, config={}), rows=rows, summary=Summary(**{"pass": True}))


def test_empty_report_is_header_only():
    out = emit(_report([]), "csv").decode()
    assert out == ",".join(COLUMNS) + "\n"


def test_row_has_sixteen_columns_and_repr_floats():
    row = Row(theorem_id="GRUSHIN", p=2.0, beta=-2.0, constant=0.25, ratio=0.1 + 0.2, **{"pass": True})
    lines = list(csv.reader(io.StringIO(emit(_report([row]), "csv").decode())))
    assert len(COLUMNS) == 16 and lines[0] == list(COLUMNS)
    rec = dict(zip(lines[0], lines[1]))
    assert len(lines[1]) == 16
    assert rec["ratio"] == repr(0.1 + 0.2) and rec["pass"] == "true" and rec["alpha"] == ""


def test_json_round_trip():
    row = Row(theorem_id="X", ratio=float("inf"), gap=float("nan"), extra={"c": 0.5}, **{"pass": False})
    rep = _report([row])
    back = Report.model_validate_json(emit(rep, "json"))
    assert back.rows[0].ratio == float("inf")
    assert back.rows[0].gap != back.rows[0].gap
    assert back.rows[0].extra == {"c": 0.5} and back.header == rep.header


def test_json_round_trip_of_real_run():
    rep = run(load_config(data=VERIFY_1D))
    assert Report.model_validate_json(emit(rep, "json")) == rep
    assert json.loads(emit(rep, "json"))["rows"][0]["pass"] is True


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError):
        load_config(data={**VERIFY_1D, "bogus": 1})
    with pytest.raises(ConfigError):
        load_config(data={**VERIFY_1D, "scheme": {"order": 8, "shell": 3}})
    with pytest.raises(ConfigError):
        load_config(data={**VERIFY_1D, "instance": {"theorem_id": "NOT_A_THEOREM"}})


def test_experiment_needs_instance():
    with pytest.raises(ConfigError):
        load_config(data={"experiment": "verify", "geometry": VERIFY_1D["geometry"]})


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.yaml")))
def test_shipped_configs_validate(name):
    load_config(CONFIGS / name)


def test_list_geometries(capsys):
    assert main(["list-geometries"]) == 0
    out = capsys.readouterr().out
    for g in ("euclidean", "grushin", "greiner", "heisenberg", "htype", "step2"):
        assert g in out
    assert "GRUSHIN" in out


def test_verify_exit_zero_and_reports(tmp_path, capsys):
    code = main(["verify", "--geometry", "grushin:n=1,k=1,gamma=1", "--theorem", "GRUSHIN",
                 "--param", "p=2", "--param", "beta=-2", "--out", str(tmp_path)])
    assert code == 0
    assert "PASS" in capsys.readouterr().out
    rows = list(csv.DictReader(io.StringIO((tmp_path / "verify.csv").read_text())))
    assert rows and rows[0]["theorem_id"] == "GRUSHIN" and float(rows[0]["ratio"]) >= 0.25


def test_inadmissible_instance_exits_two(tmp_path, capsys):
    code = main(["verify", "--geometry", "grushin:n=1,k=1,gamma=1", "--theorem", "GRUSHIN",
                 "--param", "beta=-4", "--out", str(tmp_path)])
    assert code == 2
    assert "beta+Q" in capsys.readouterr().err


def test_bad_config_exits_two(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("experiment: verify\nnonsense: true\n")
    assert main(["verify", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["ggm", "--config", str(tmp_path / "missing.yaml")]) == 2


def test_failing_floor_exits_one(tmp_path):
    cfg = tmp_path / "sweep.yaml"
    cfg.write_text(
        "experiment: sweep\n"
        "geometry: {type: euclidean, m: 1, N: 1}\n"
        "instance: {theorem_id: SPEC, params: {p: 2, beta: -2}}\n"
        "sweep: {epsilons: [0.4, 0.2], max_final_gap: 0.001}\n"
    )
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path)]) == 1


def test_experiment_mismatch_exits_two(tmp_path):
    assert main(["sweep", "--config", str(CONFIGS / "ggm.yaml"), "--out", str(tmp_path)]) == 2


def test_same_seed_gives_identical_bytes(tmp_path):
    args = ["poincare", "--config", str(CONFIGS / "poincare.yaml"), "--seed", "5", "--out", str(tmp_path)]
    outs = []
    for _ in range(2):
        assert main(args) == 0
        outs.append(((tmp_path / "poincare.csv").read_bytes(), (tmp_path / "poincare.json").read_bytes()))
    assert outs[0] == outs[1]
    assert main(args[:-3] + ["6", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "poincare.csv").read_bytes() != outs[0][0]
