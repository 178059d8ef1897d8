import json

import pytest

from src.cli.main import main
from src.core import worker_manager
from src.utils import logger

KERNEL_ARGS = ["kernel", "--arch", "vanilla", "--depth", "2", "--width", "4", "--input-dim", "4", "--pairs", "2"]


@pytest.fixture(autouse=True)
def reset_globals():
    yield
    logger.set_verbosity(logger.NORMAL)
    worker_manager.configure_workers()


def split_output(text: str):
    lines = text.splitlines()
    config = json.loads(lines[0][len("# config: "):])
    results = [line for line in lines[1:] if not line.startswith("# ")]
    summary = [line[2:] for line in lines[1:] if line.startswith("# ")]
    return config, results, summary


def test_kernel_limit_only(capsys):
    assert main(KERNEL_ARGS) == 0

    out = capsys.readouterr().out
    assert out.startswith("# config: ")
    config, results, summary = split_output(out)
    assert config["subcommand"] == "kernel"
    assert config["common"]["format"] == "csv"
    assert config["kernel"]["pairs"] == 2
    assert results[0] == "pair,kind,limit,empirical,relative_error"
    assert len(results) == 1 + 6
    assert results[1].startswith("0,diag,")
    assert summary[0].startswith("Kernel límite vanilla L=2")


def test_failed_comparison_exits_with_one(capsys):
    code = main(KERNEL_ARGS + ["--compare-empirical", "--T", "2", "--tolerance", "1e-9"])

    assert code == 1
    _, results, _ = split_output(capsys.readouterr().out)
    assert all(row.split(",")[3] for row in results[1:])


def test_config_file_is_overridden_by_flags(tmp_path, capsys):
    path = tmp_path / "kernel.json"
    path.write_text(json.dumps({"kernel": {"pairs": 1, "scope": "body"}}), encoding="utf-8")

    assert main(KERNEL_ARGS[:-2] + ["--config", str(path), "--pairs", "3"]) == 0

    config, results, _ = split_output(capsys.readouterr().out)
    assert config["kernel"]["pairs"] == 3
    assert config["kernel"]["scope"] == "body"
    assert len(results) == 1 + 9


def test_invalid_values_are_usage_errors(capsys):
    assert main(["variance", "--draws", "0"]) == 2
    err = capsys.readouterr().err
    assert "usage:" in err
    assert "variance.draws" in err


def test_argparse_errors_return_two():
    assert main(["variance", "--widths", "a,b"]) == 2
    assert main(["organize"]) == 2


def test_domain_errors_return_two(capsys):
    code = main(["duality", "--arch", "vanilla", "--width", "4", "--depth", "2", "--input-dim", "3",
                 "--k", "9", "--draws", "2000"])

    assert code == 2
    assert "InvalidIndex" in capsys.readouterr().err


def test_duality_defaults_to_json_lines(capsys):
    code = main(["duality", "--arch", "vanilla", "--width", "4", "--depth", "2", "--input-dim", "3",
                 "--k", "1", "--k", "final", "--draws", "2000", "--quiet"])

    assert code == 0
    config, results, summary = split_output(capsys.readouterr().out)
    assert config["common"]["format"] == "jsonl"
    records = [json.loads(line) for line in results]
    assert [record["k"] for record in records] == ["W[1,0]", "Wf"]
    assert all(record["pass"] for record in records)
    assert len(summary) == 2


def test_explicit_alphas_set_depth(capsys):
    code = main(["kernel", "--arch", "resnet", "--alphas", "0.2,0.2,0.2,0.2", "--input-dim", "3", "--pairs", "1"])

    assert code == 0
    config, _, _ = split_output(capsys.readouterr().out)
    assert config["kernel"]["depth"] == 4


def test_regress_output_file_is_deterministic(tmp_path, capsys):
    args = ["regress", "--classes", "2", "--dim", "3", "--per-class", "4", "--arch", "vanilla",
            "--widths", "4", "--depths", "1,3", "--T", "1", "--repeats", "1", "--seed", "3"]
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"

    assert main(args + ["--out", str(first)]) == 0
    assert main(args + ["--out", str(second)]) == 0

    assert first.read_bytes() == second.read_bytes()
    lines = first.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "kind,n,L,T,repeat_count,mean_accuracy,std_accuracy"
    assert len(lines) == 1 + 4
    assert lines[3].startswith("vanilla,inf,1,0,1,")
    out = capsys.readouterr().out
    assert out.count("# config: ") == 2


def test_moments_and_variance_run_small(capsys):
    assert main(["moments", "--chain", "linear", "--widths", "4", "--depth", "1", "--draws", "2000", "--quiet"]) in (0, 1)
    _, results, _ = split_output(capsys.readouterr().out)
    assert results[0] == "kind,n,layer,order,observed,stderr,predicted,z,pass"
    assert len(results) == 1 + 2

    assert main(["variance", "--arch", "resnet,densenet", "--widths", "4", "--depths", "1,2,3",
                 "--draws", "100", "--input-dim", "3", "--format", "jsonl", "--quiet"]) == 0
    _, results, summary = split_output(capsys.readouterr().out)
    records = [json.loads(line) for line in results]
    assert len(records) == 12
    assert all("bound_upper" in r for r in records if r["diag"])
    assert any(line.startswith("Spearman") for line in summary)


def test_split_outside_unit_interval_is_usage_error(capsys):
    assert main(["regress", "--split", "1.5"]) == 2
    err = capsys.readouterr().err
    assert "usage:" in err
    assert "regress.split" in err


def test_unwritable_results_exit_with_two(tmp_path, capsys):
    # la carpeta existe, así que pasa la validación, pero no se puede abrir como archivo
    assert main(KERNEL_ARGS + ["--out", str(tmp_path)]) == 2

    assert "No se pudieron escribir los resultados" in capsys.readouterr().err


@pytest.mark.parametrize(
    "args",
    [
        ["variance", "--arch", "resnet,densenet", "--widths", "4", "--depths", "1,2", "--draws", "100",
         "--input-dim", "3"],
        ["duality", "--arch", "densenet", "--width", "4", "--depth", "3", "--input-dim", "3",
         "--indices", "2", "--draws", "2000", "--format", "csv"],
        ["moments", "--chain", "relu", "--widths", "4,8", "--depth", "2", "--draws", "2000"],
        KERNEL_ARGS + ["--compare-empirical", "--T", "3"],
    ],
    ids=["variance", "duality", "moments", "kernel"],
)
def test_reruns_write_identical_csv_for_any_thread_count(tmp_path, capsys, args):
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"

    assert main(args + ["--seed", "11", "--threads", "1", "--quiet", "--out", str(first)]) in (0, 1)
    assert main(args + ["--seed", "11", "--threads", "3", "--quiet", "--out", str(second)]) in (0, 1)

    assert first.read_bytes() == second.read_bytes()
    assert first.read_text(encoding="utf-8").count("\n") > 1
