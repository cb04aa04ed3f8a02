# SPDX-FileCopyrightText: 2019-2020 Magenta ApS
#
# SPDX-License-Identifier: MPL-2.0
# pylint: disable=redefined-outer-name
# pylint: disable=unused-argument
"""Test the command line front end."""
import json
from collections.abc import Callable
from pathlib import Path
from unittest.mock import patch

import pytest
from more_itertools import one

from sfdreduce.exceptions import NoApproach
from sfdreduce.main import build_parser
from sfdreduce.main import chart_header
from sfdreduce.main import load_settings
from sfdreduce.main import main
from sfdreduce.reports import read_manifest

SMALL_SAMPLE = "grid_points = 3; random_points = 5; jobs = 2\n"

Run = Callable[..., tuple[int, Path]]


@pytest.fixture
def run(tmp_path: Path) -> Run:
    """Run the CLI on a configuration document, returning code and output."""

    def runner(command: str, document: str = "", *flags: str) -> tuple[int, Path]:
        config = tmp_path / "run.cfg"
        config.write_text(SMALL_SAMPLE + document, encoding="utf-8")
        out = tmp_path / "out"
        argv = ["--config", str(config), "--out", str(out), "--log-level", "ERROR"]
        return main([*argv, *flags, command]), out

    return runner


def load(path: Path) -> dict:
    return json.loads(path.read_text(encoding="utf-8"))


def test_parser() -> None:
    args = build_parser().parse_args(["--order", "1", "--force", "verify"])
    assert args.command == "verify"
    assert args.order == 1
    assert args.force is True
    assert args.eps is None

    with pytest.raises(SystemExit):
        build_parser().parse_args(["--order", "2", "verify"])
    with pytest.raises(SystemExit):
        build_parser().parse_args(["reduce-all"])


def test_load_settings_precedence(
    tmp_path: Path, monkeypatch: pytest.MonkeyPatch
) -> None:
    """Flags win over the document, which wins over the environment."""
    monkeypatch.setenv("SFD_SEED", "7")
    monkeypatch.setenv("SFD_ORDER", "1")
    config = tmp_path / "run.cfg"
    config.write_text('system = "fold-demo"; order = 0; eps = 0.05\n')
    args = build_parser().parse_args(
        ["--config", str(config), "--eps", "0.02", "verify"]
    )
    settings, parsed = load_settings(args)
    assert parsed.preset == "fold-demo"
    assert settings.system == "fold-demo"
    assert settings.eps == 0.02
    assert settings.order == 0
    assert settings.seed == 7


def test_verify(run: Run) -> None:
    code, out = run("verify")
    assert code == 0
    assert load(out / "a1.json")["verdict"] == "extends"
    assert load(out / "a2.json")["n_samples"] == 3**3 + 5
    assert load(out / "a3.json")["lambda"] == pytest.approx(0.475)
    manifest = read_manifest(out)
    assert manifest.exit_code == 0
    assert manifest.verdicts == {"A1": "extends", "A2": "pass", "A3": "pass"}
    assert [entry.path for entry in manifest.files] == [
        "a1.json",
        "a2.json",
        "a3.json",
    ]
    assert manifest.parameters["settings"]["system"] == "linear-coupled"


def test_verify_unstable(run: Run) -> None:
    code, out = run("verify", 'system = "tet-demo"\n')
    assert code == 1
    assert load(out / "a3.json")["verdict"] == "fail"
    assert read_manifest(out).verdicts["A3"] == "fail"


def test_reduce(run: Run) -> None:
    code, out = run("reduce", "", "--order", "1")
    assert code == 0
    lines = (out / "chart.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0].split(",") == chart_header(1, 1)
    assert len(lines) == 1 + 3**3 + 5
    assert load(out / "reduced.json")["order"] == 1


def test_reduce_refused(run: Run) -> None:
    """Failed assumptions stop the reduction unless forced."""
    code, out = run("reduce", 'system = "stiff-inertia"\n')
    assert code == 1
    assert not (out / "chart.csv").exists()
    assert read_manifest(out).verdicts["A1"] == "diverges"


def test_simulate_failure_is_reported(run: Run) -> None:
    error = NoApproach("Full trajectory never approached the slow manifold")
    with patch("sfdreduce.main.synchronize", side_effect=error):
        code, out = run("simulate")
    assert code == 1
    manifest = read_manifest(out)
    assert manifest.error is not None
    assert manifest.error["error"] == "NoApproach"


def test_fold(run: Run) -> None:
    code, out = run("fold", 'system = "fold-demo"; rays = 2\n')
    assert code == 0
    document = load(out / "fold.json")
    assert len(document["rays"]) == 2
    assert read_manifest(out).verdicts["fold"]["rays"] == 2


def test_compare_local(run: Run) -> None:
    code, out = run(
        "compare-local", 'system = "twodof-ssm"; t_span = [0, 5]; k2_sweep = [8.0]\n'
    )
    assert code == 0
    document = load(out / "compare.json")
    assert one(document["sweep"])["gap"] == pytest.approx(0.0625)
    header = (out / "compare.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header == "t,x_sc,dx_sc,x_md,dx_md,x_ssm,dx_ssm"


def test_compare_local_requires_twodof(run: Run) -> None:
    code, out = run("compare-local")
    assert code == 2
    assert "twodof-ssm" in read_manifest(out).error["message"]  # type: ignore


@pytest.mark.parametrize(
    "document",
    [
        "order = 3\n",
        "order = 1; order = 0\n",
        "eps\n",
        'system = "example-9"\n',
    ],
)
def test_configuration_errors(run: Run, document: str) -> None:
    code, out = run("verify", document)
    assert code == 2
    manifest = read_manifest(out)
    assert manifest.exit_code == 2
    assert manifest.files == []


def test_missing_config(tmp_path: Path) -> None:
    out = tmp_path / "out"
    code = main(["--config", str(tmp_path / "absent.cfg"), "--out", str(out), "verify"])
    assert code == 2
    assert read_manifest(out).error["error"] == "FileNotFoundError"  # type: ignore


@pytest.mark.parametrize("command", ["verify", "reduce"])
def test_repeated_runs_are_identical(tmp_path: Path, command: str) -> None:
    """Two runs with the same configuration write the same bytes."""
    config = tmp_path / "run.cfg"
    config.write_text(SMALL_SAMPLE, encoding="utf-8")
    outs = [tmp_path / "first", tmp_path / "second"]
    for out in outs:
        argv = ["--config", str(config), "--out", str(out), "--log-level", "ERROR"]
        assert main([*argv, "--order", "1", command]) == 0

    first, second = (read_manifest(out) for out in outs)
    assert first.files == second.files
    assert first.files
    for entry in first.files:
        assert (outs[0] / entry.path).read_bytes() == (
            outs[1] / entry.path
        ).read_bytes()
    for manifest in (first, second):
        del manifest.parameters["settings"]["out"]
    assert first.parameters == second.parameters
    assert first.verdicts == second.verdicts
