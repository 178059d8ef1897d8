import json

import pytest

from src.core.errors import UsageError
from src.utils.run_config import RunConfig


def test_run_config_defaults_and_derived_format(tmp_path):
    config = RunConfig("duality")
    config.validate()

    assert config.common["format"] == "jsonl"
    assert config.section["check"] == "thm3"
    kernel = RunConfig("kernel")
    kernel.validate()
    assert kernel.common["format"] == "csv"


def test_run_config_file_then_overrides(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"common": {"seed": 7}, "variance": {"draws": 300, "widths": [8]}}), encoding="utf-8")

    config = RunConfig("variance", str(path))
    config.apply_overrides({"variance.draws": 500, "common.seed": None})

    assert config.get("common.seed") == 7
    assert config.get("variance.draws") == 500
    assert config.get("variance.widths") == [8]
    # las claves no tocadas conservan el valor por defecto
    assert config.get("variance.depths") == [1, 2, 4, 8]


def test_run_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"variance": {"drawz": 10}}), encoding="utf-8")

    with pytest.raises(UsageError):
        RunConfig("variance", str(path))
    with pytest.raises(UsageError):
        RunConfig("variance").set("variance.nope", 1)
    with pytest.raises(UsageError):
        RunConfig("organize")


def test_run_config_rejects_invalid_json(tmp_path):
    path = tmp_path / "run.json"
    path.write_text("{no es json", encoding="utf-8")

    with pytest.raises(UsageError):
        RunConfig("kernel", str(path))


def test_missing_config_file_falls_back_to_defaults(tmp_path):
    config = RunConfig("moments", str(tmp_path / "missing.json"))

    assert config.get("moments.depth") == 4


def test_explicit_alphas_fix_depth():
    config = RunConfig("duality")
    config.set("duality.alphas", [0.3, 0.3])
    config.validate()

    assert config.section["depth"] == 2


@pytest.mark.parametrize(
    "key, value",
    [
        ("variance.draws", 0),
        ("variance.widths", [8, 0]),
        ("variance.depths", [-1]),
        ("regress.repeats", 0),
        ("regress.split", 1.5),
        ("regress.split", 0.0),
        ("common.threads", 0),
        ("common.seed", -3),
        ("common.format", "xml"),
        ("common.verbosity", "loud"),
    ],
)
def test_validate_rejects_bad_values(key, value):
    subcommand = key.split(".")[0] if not key.startswith("common") else "variance"
    config = RunConfig(subcommand)
    config.set(key, value)

    with pytest.raises(UsageError):
        config.validate()


def test_validate_rejects_unwritable_output(tmp_path):
    config = RunConfig("kernel")
    config.set("common.out", str(tmp_path / "no" / "existe" / "out.csv"))

    with pytest.raises(UsageError):
        config.validate()


def test_effective_line_is_canonical_and_reloadable(tmp_path):
    config = RunConfig("regress")
    config.set("regress.T", 4)
    config.validate()

    line = config.effective_line()
    effective = json.loads(line)
    assert effective["subcommand"] == "regress"
    assert effective["regress"]["T"] == 4
    assert line == json.dumps(effective, sort_keys=True, ensure_ascii=False)

    path = tmp_path / "saved.json"
    assert config.export_config(str(path))
    reloaded = RunConfig("regress", str(path))
    reloaded.validate()
    assert reloaded.effective_line() == line
