import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seqperm.cli import main
from seqperm.engine import EngineConfig, run_bh_avbc
from seqperm.errors import DataError, InvalidArgumentError
from seqperm.io import (RunManifest, bh_maxp_shortcut_check, filter_zero_genes,
                        ingest_matrix, normalize_library_size, results_table)
from seqperm.pvalue_core import AvBcParams
from seqperm.sim import synthetic_counts
from seqperm.stats_perm import Dataset


def write(path, text, crlf=False):
    path.write_bytes(text.replace("\n", "\r\n" if crlf else "\n").encode())
    return path


def test_ingest_roundtrip_and_newlines(tmp_path):
    text = "g1\tg2\tlab\n1\t2\t0\n3\t4\t1\n5\t6\t0\n"
    a = ingest_matrix(write(tmp_path / "a.tsv", text), label_col="lab")
    b = ingest_matrix(write(tmp_path / "b.tsv", text, crlf=True), label_col="lab")
    assert (a.n, a.M) == (3, 2) and a.names == ["g1", "g2"]
    assert np.array_equal(a.matrix, b.matrix) and np.array_equal(a.labels, b.labels)
    c = ingest_matrix(write(tmp_path / "c.csv", text.replace("\t", ",")), label_col="lab")
    assert np.array_equal(a.matrix, c.matrix)


def test_ingest_label_file_and_sample_col(tmp_path):
    m = write(tmp_path / "m.tsv", "id\tg1\ns1\t1.5\ns2\t2\n")
    lab = write(tmp_path / "l.txt", "0\n1\n")
    ds = ingest_matrix(m, labels=lab, sample_col=True)
    assert ds.names == ["g1"] and ds.labels.tolist() == [0, 1]


def test_ingest_errors(tmp_path):
    with pytest.raises(DataError, match=r"row 3, column 'g2'"):
        ingest_matrix(write(tmp_path / "x.tsv", "g1\tg2\tl\n1\t2\t0\n3\tabc\t1\n"), label_col="l")
    with pytest.raises(DataError, match="row 2"):
        ingest_matrix(write(tmp_path / "y.tsv", "g1\tg2\tl\n1\t0\n"), label_col="l")
    with pytest.raises(DataError, match="no labels"):
        ingest_matrix(write(tmp_path / "z.tsv", "g1\n1\n2\n"))
    with pytest.raises(DataError, match="both label groups"):
        ingest_matrix(write(tmp_path / "w.tsv", "g1\tl\n1\t1\n2\t1\n"), label_col="l")


def test_normalize_and_filter():
    ds = Dataset(np.array([[2.0, 2.0, 0.0], [1.0, 3.0, 0.0]]), [0, 1], ["a", "b", "z"])
    nd = normalize_library_size(ds)
    np.testing.assert_allclose(nd.matrix[0], [0.5, 0.5, 0.0])
    np.testing.assert_allclose(nd.matrix.sum(axis=1), 1.0)
    prop = Dataset(np.array([[1.0, 3.0], [2.0, 6.0]]), [0, 1])
    n2 = normalize_library_size(prop)
    assert np.allclose(n2.matrix[0], n2.matrix[1])
    fd, removed = filter_zero_genes(ds)
    assert removed == ["z"] and fd.names == ["a", "b"]
    same, none = filter_zero_genes(fd)
    assert none == [] and np.array_equal(same.matrix, fd.matrix)
    with pytest.raises(DataError, match="sample 1"):
        normalize_library_size(Dataset(np.array([[1.0], [0.0]]), [0, 1]))
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        empty, rem = filter_zero_genes(Dataset(np.zeros((2, 2)), [0, 1]))
    assert empty.M == 0 and len(rem) == 2 and w


def test_maxp_shortcut_check_cases():
    assert bh_maxp_shortcut_check([0.05, 0.09], 2, 0, 0.1, 2)
    assert not bh_maxp_shortcut_check([0.01, 1.0], 2, 0, 0.1, 2)
    assert bh_maxp_shortcut_check([0.06], 1, 1, 0.1, 2)
    with pytest.raises(InvalidArgumentError):
        bh_maxp_shortcut_check([], 0, 0, 0.1, 2)


@settings(max_examples=40, deadline=None)
@given(p=st.lists(st.floats(1e-4, 1.0), min_size=1, max_size=20), k=st.integers(0, 5))
def test_maxp_shortcut_implies_bh_rejects_active(p, k):
    from seqperm.procedures import bh_reject
    M = len(p) + k
    if bh_maxp_shortcut_check(p, len(p), k, 0.1, M):
        # k already-rejected hypotheses with tiny p-values plus the active ones
        full = [1e-9] * k + list(p)
        assert len(bh_reject(full, 0.1)) == M


def test_results_table_deterministic():
    rng = np.random.default_rng(0)
    mat = (rng.random((5, 300)) < 0.05).astype(np.int8)
    c = EngineConfig(alpha=0.1, strategy=AvBcParams(3))
    a = results_table(run_bh_avbc(c, mat), list("abcde"))
    b = results_table(run_bh_avbc(c, mat), list("abcde"))
    assert a == b
    assert a.splitlines()[0] == "name\ttau\tp_value\trejected\trejection_time"


def test_manifest_validation(tmp_path):
    with pytest.raises(InvalidArgumentError):
        RunManifest({}, 0, -1.0, [])


@pytest.fixture(scope="module")
def matrix_file(tmp_path_factory):
    ds, _, _ = synthetic_counts(30, 60, seed=2)
    path = tmp_path_factory.mktemp("d") / "counts.tsv"
    with open(path, "w") as fh:
        fh.write("label\t" + "\t".join(ds.names) + "\n")
        for i in range(ds.n):
            fh.write(f"{ds.labels[i]}\t" + "\t".join(str(int(v)) for v in ds.matrix[i]) + "\n")
    return path


def test_cli_test_writes_manifest_and_replays(matrix_file, tmp_path):
    out = tmp_path / "r.tsv"
    code = main(["test", str(matrix_file), "--label-col", "label", "--alpha", "0.1",
                 "--strategy", "avbc", "--h", "15", "--statistic", "mann-whitney",
                 "--normalize", "--filter-zeros", "--seed", "4", "--out", str(out)])
    assert code == 0
    man = json.loads((tmp_path / "r.tsv.manifest.json").read_text())
    assert len(man["records"]) == 60 and man["duration_seconds"] >= 0
    assert man["config"]["strategy"] == {"h": 15, "__type__": "AvBcParams"}
    again = tmp_path / "again.tsv"
    assert main(["test", "--from-manifest", str(tmp_path / "r.tsv.manifest.json"),
                 "--out", str(again)]) == 0
    assert again.read_bytes() == out.read_bytes()
    rerun = tmp_path / "rerun.tsv"
    main(["test", str(matrix_file), "--label-col", "label", "--strategy", "avbc", "--h", "15",
          "--normalize", "--filter-zeros", "--seed", "4", "--out", str(rerun)])
    assert rerun.read_bytes() == out.read_bytes()


@pytest.mark.parametrize("extra", [["--strategy", "binmix", "--B-max", "2000"],
                                   ["--strategy", "classical", "--B-max", "500"],
                                   ["--strategy", "bc", "--B-max", "500"],
                                   ["--strategy", "aggressive", "--stream-mode", "shared"],
                                   ["--two-sided", "--B-max", "1000"],
                                   ["--procedure", "by", "--B-max", "1000"],
                                   ["--batch", "4"]])
def test_cli_strategies(matrix_file, tmp_path, extra):
    assert main(["test", str(matrix_file), "--label-col", "label",
                 "--out", str(tmp_path / "o.tsv")] + extra) == 0


def test_cli_errors(tmp_path, capsys):
    assert main(["test", str(tmp_path / "missing.tsv"), "--label-col", "l"]) == 1
    assert "not found" in capsys.readouterr().err
    assert main(["test", "--bogus"]) == 2
    assert main([]) == 2
    bad = write(tmp_path / "bad.tsv", "g\tl\nx\t0\n1\t1\n")
    assert main(["test", str(bad), "--label-col", "l"]) == 1
    ok = write(tmp_path / "ok.tsv", "g\tl\n1\t0\n2\t1\n")
    assert main(["test", str(ok), "--label-col", "l", "--alpha", "2"]) == 2


def test_cli_bound(capsys):
    assert main(["bound", "--M", "1000", "--h", "10", "--alpha", "0.1"]) == 0
    line = capsys.readouterr().out.splitlines()[1].split("\t")
    assert line[3] == "99999" and line[4] == "99"
    assert float(line[5]) < 789.5 and int(line[6]) <= 789


def test_cli_other_commands(matrix_file, tmp_path, capsys):
    assert main(["maxt", str(matrix_file), "--label-col", "label", "--B-max", "500",
                 "--out", str(tmp_path / "m.tsv")]) == 0
    assert main(["simulate", "--M", "20", "--reps", "1", "--B", "300", "--cap", "500",
                 "--emit-csv", str(tmp_path / "s.csv")]) == 0
    assert (tmp_path / "s.csv").exists()
    assert main(["bench", "--n", "20", "--M", "30"]) == 0
