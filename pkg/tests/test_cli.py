import json
import os
import stat

import pytest

from vaultquery.cli import main


@pytest.fixture
def work(tmp_path):
    p = {n: str(tmp_path / n) for n in ("key", "index", "store", "data.jsonl", "queries.txt", "transcript.jsonl", "schema.json", "metrics.csv")}
    assert main(["keygen", "--key", p["key"], "--seed", "1"]) == 0
    assert main(["gen-data", "--count", "200", "--out", p["data.jsonl"], "--seed", "3", "--schema-out", p["schema.json"]]) == 0
    return p


def common(p):
    return ["--key", p["key"], "--index", p["index"], "--store", p["store"], "--seed", "9"]


def test_keygen_mode(work):
    assert os.path.getsize(work["key"]) == 32
    assert stat.S_IMODE(os.stat(work["key"]).st_mode) == 0o600


def test_ingest_query_insert_refresh(work, capsys, tmp_path):
    assert main(["ingest", "--data", work["data.jsonl"], *common(work)]) == 0
    first = json.loads(open(work["data.jsonl"]).readline())
    name = first["fields"]["last_name"]
    capsys.readouterr()
    assert main(["query", f"(eq last_name {name})", *common(work), "--transcript", work["transcript.jsonl"]]) == 0
    out = capsys.readouterr().out.splitlines()
    assert any(json.loads(line)["id"] == first["id"] for line in out)
    assert main(["query", "--explain", f"(eq last_name {name})", *common(work)]) == 0
    assert json.loads(capsys.readouterr().out)["plan"].startswith("last_name=")
    new = tmp_path / "new.jsonl"
    new.write_text(json.dumps({"id": 10**6, "fields": {**first["fields"]}}) + "\n")
    assert main(["insert", "--data", str(new), *common(work)]) == 0
    assert main(["refresh", *common(work)]) == 0
    capsys.readouterr()
    assert main(["query", f"(eq last_name {name})", *common(work)]) == 0
    ids = {json.loads(line)["id"] for line in capsys.readouterr().out.splitlines()}
    assert {first["id"], 10**6} <= ids


def test_bench_and_report(work, capsys):
    assert main(["gen-queries", "--data", work["data.jsonl"], "--count", "20", "--out", work["queries.txt"], "--seed", "2"]) == 0
    for system in ("sse", "det", "plain"):
        args = ["bench", "--data", work["data.jsonl"], "--queries", work["queries.txt"], "--system", system, "--metrics-out", work["metrics.csv"], "--seed", "4"]
        assert main(args) == 0
        assert "recall (min over queries): 1.0000" in capsys.readouterr().out
    assert main(["report", "--metrics", work["metrics.csv"]]) == 0
    assert main(["report", "--combiner-params", "2,4,2,16,3,10"]) == 0
    assert "proximity" in capsys.readouterr().out


def test_attacks_from_cli(work, tmp_path, capsys):
    assert main(["gen-queries", "--data", work["data.jsonl"], "--count", "20", "--out", work["queries.txt"], "--seed", "2"]) == 0
    det = str(tmp_path / "det.idx")
    args = ["bench", "--data", work["data.jsonl"], "--queries", work["queries.txt"], "--seed", "4", "--transcript", work["transcript.jsonl"]]
    assert main(args) == 0
    assert main(["bench", "--system", "det", "--det-index-out", det, *args[1:5]]) == 0
    out = str(tmp_path / "report.json")
    assert main(["attack", "count", "--data", work["data.jsonl"], "--transcript", work["transcript.jsonl"], "--out", out]) == 0
    assert json.loads(open(out).read())["queries_consumed"] == 20
    assert main(["attack", "frequency", "--data", work["data.jsonl"], "--det-index", det]) == 0
    assert "frequency attack:" in capsys.readouterr().out


@pytest.mark.parametrize(
    "argv,code",
    [
        ([], 1),
        (["frobnicate"], 1),
        (["keygen"], 1),
        (["query", "(eq a b)", "--key", "/nonexistent", "--index", "/x", "--store", "/y"], 2),
        (["report"], 1),
    ],
)
def test_exit_codes(argv, code):
    assert main(argv) == code


def test_bad_query_exits_2(work):
    assert main(["ingest", "--data", work["data.jsonl"], *common(work)]) == 0
    assert main(["query", "(eq last_name", *common(work)]) == 2
    assert main(["query", "(stem last_name x)", *common(work)]) == 2
