"""Command-line behaviour: dispatch, outputs, exit codes."""

import pytest

from slicesim.cli import main

from conftest import scenario_path


def test_compose_reference_reproduces_six_blocks(tmp_path, capsys):
    status = main(["compose", "--catalog", "reference",
                   "--out-dir", str(tmp_path)])
    assert status == 0
    text = (tmp_path / "grouping.txt").read_text()
    for bb in ("bb AF", "bb CM", "bb MM", "bb SAM", "bb FM", "bb CGHF"):
        assert bb in text
    assert "# refinement: accept" in text


def test_run_is_deterministic_at_the_byte_level(tmp_path):
    scenario = str(scenario_path("attach-two-slices.scn"))
    main(["run", "--scenario", scenario, "--seed", "7",
          "--out-dir", str(tmp_path / "one")])
    main(["run", "--scenario", scenario, "--seed", "7",
          "--out-dir", str(tmp_path / "two")])
    assert (tmp_path / "one" / "trace.log").read_bytes() == \
        (tmp_path / "two" / "trace.log").read_bytes()
    assert (tmp_path / "one" / "metrics.txt").read_bytes() == \
        (tmp_path / "two" / "metrics.txt").read_bytes()


def test_run_with_fabric_override(tmp_path):
    status = main(["run", "--scenario", str(scenario_path("paging.scn")),
                   "--seed", "7", "--out-dir", str(tmp_path),
                   "--fabric", "dispatcher"])
    assert status == 0
    assert "CPD." in (tmp_path / "trace.log").read_text()


def test_validate_blueprint_reports_violations(tmp_path, capsys):
    bad = tmp_path / "missing-sam.bp"
    bad.write_text("""
blueprint broken
  type: embb
  fabric: full_mesh
  anchors: a1
  bb AF
  bb CM
  bb FM
end
""")
    status = main(["validate", "--blueprint", str(bad)])
    assert status == 1
    assert "mandatory BB SAM absent" in capsys.readouterr().out


def test_validate_good_blueprint(capsys):
    status = main(["validate", "--blueprint", str(scenario_path("bp-embb.bp"))])
    assert status == 0


def test_validate_scenario(capsys):
    status = main(["validate", "--scenario",
                   str(scenario_path("attach-two-slices.scn"))])
    assert status == 0


def test_trace_check_green_on_run_output(tmp_path, capsys):
    main(["run", "--scenario", str(scenario_path("handover-mbb.scn")),
          "--seed", "7", "--out-dir", str(tmp_path)])
    status = main(["trace-check", "--trace", str(tmp_path / "trace.log")])
    assert status == 0
    assert "no violations" in capsys.readouterr().out


def test_trace_check_flags_corruption(tmp_path, capsys):
    main(["run", "--scenario", str(scenario_path("paging.scn")),
          "--seed", "7", "--out-dir", str(tmp_path)])
    trace = tmp_path / "trace.log"
    lines = trace.read_text().splitlines()
    lines.append(lines[-1])   # duplicated record breaks the total order
    trace.write_text("\n".join(lines) + "\n")
    status = main(["trace-check", "--trace", str(trace)])
    assert status == 1


def test_compare_fabrics_writes_table(tmp_path, capsys):
    status = main(["compare-fabrics", "--scenario",
                   str(scenario_path("attach-two-slices.scn")),
                   "--seed", "7", "--out-dir", str(tmp_path)])
    assert status == 0
    table = (tmp_path / "compare.txt").read_text()
    for model in ("full_mesh", "relay", "dispatcher", "pubsub"):
        assert model in table


def test_domain_error_exits_one(tmp_path, capsys):
    missing = tmp_path / "nope.scn"
    missing.write_text("scenario x\nend\n")
    status = main(["validate", "--scenario", str(missing)])
    assert status == 1


def test_usage_error_exits_two():
    with pytest.raises(SystemExit) as exc:
        main(["run"])   # missing --scenario
    assert exc.value.code == 2
