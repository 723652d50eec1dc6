import math
import shutil

import pytest

from reflexec.errors import HarnessError, MissingFile, NeverYielded, YieldFromRoot
from reflexec.harness import (
    BUNDLED, MigrationReport, Session, bundled_source, checkpoint, describe, parse_arg,
    program_source, restore, run_program,
)
from reflexec.pickling import REPLACE_WITH_NIL, drop_bindings
from reflexec.report import DEDUP_FIELDS, SCALING_FIELDS, dedup_rows, linearity, scaling_rows, to_csv


def test_every_bundled_program_loads():
    for stem in BUNDLED:
        assert program_source(stem) == bundled_source(stem)
        assert program_source(stem + ".sexp") == bundled_source(stem)
    with pytest.raises(FileNotFoundError):
        program_source("no-such-program")


def test_parse_arg():
    assert parse_arg("3") == 3.0
    assert parse_arg("true") is True and parse_arg("false") is False
    assert parse_arg("nil") is None
    assert parse_arg("word") == "word"


def test_run_program_count():
    output, value, yields = run_program(bundled_source("count"))
    assert output == [f"Number {i}" for i in range(1, 6)]
    assert yields == [1.0, 2.0, 3.0, 4.0, 5.0]
    assert value is None


def test_factorial_twelve():
    _, value, yields = run_program(bundled_source("factorial"), ["12"])
    assert value == 479001600.0
    assert yields == [None]


def test_definitions_may_not_yield():
    with pytest.raises(YieldFromRoot):
        Session.boot("(yield 1) (lambda (x) x)")
    with pytest.raises(HarnessError):
        Session.boot("(define co (create (lambda (x) (yield x)))) (resume co 1) (lambda (x) x)")


def test_checkpoint_frame_count_is_the_live_depth():
    s = Session.boot(bundled_source("factorial"), ["10"])
    s.run_to_yield(1)
    live = s.depth()
    cp = checkpoint(s, 1)
    assert cp.report.frame_count == live == 12
    assert cp.report.payload_bytes == len(cp.data)


def test_payload_grows_with_depth():
    sizes = []
    for n in (10, 20):
        s = Session.boot(bundled_source("factorial"), [str(n)])
        sizes.append(checkpoint(s, 1).report.payload_bytes)
    assert sizes[1] > sizes[0]


def test_restore_is_repeatable():
    s = Session.boot(bundled_source("factorial"), ["8"])
    cp = checkpoint(s, 1)
    runs = []
    for _ in range(2):
        r = restore(cp.data)
        runs.append((r.finish(), list(r.output)))
    assert runs[0] == runs[1] == (40320.0, [])


def test_restore_fills_in_the_report():
    s = Session.boot(bundled_source("count"))
    cp = checkpoint(s, 2)
    report = MigrationReport()
    r = restore(cp.data, report=report)
    assert report.frame_count == r.depth() > 0
    assert report.payload_bytes == len(cp.data)
    assert r.finish() is None
    assert r.output == ["Number 3", "Number 4", "Number 5"]


def test_checkpoint_past_the_last_yield():
    s = Session.boot(bundled_source("inc"), ["1"])
    with pytest.raises(NeverYielded):
        checkpoint(s, 1)
    assert s.done and s.value == 2.0


def test_missing_files_are_reported(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    s = Session.boot(bundled_source("knn_lite"), file_root=str(src))
    cp = checkpoint(s, 1)
    assert [f.path for f in cp.doc.files] == ["knn_out.txt"]
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(MissingFile):
        restore(cp.data, file_root=str(empty))
    shutil.copy(src / "knn_out.txt", empty / "knn_out.txt")
    r = restore(cp.data, file_root=str(empty))
    assert r.finish() == 8.0
    expected = tmp_path / "ref"
    expected.mkdir()
    run_program(bundled_source("knn_lite"), file_root=str(expected))
    assert (empty / "knn_out.txt").read_text() == (expected / "knn_out.txt").read_text()


def test_drop_bindings_shrinks_myprint():
    s = Session.boot(bundled_source("myprint"), ["3"])
    full = checkpoint(s, 1)
    s2 = Session.boot(bundled_source("myprint"), ["3"])
    dropped = checkpoint(s2, 1, edit=lambda d: drop_bindings(d, ["a"]))
    assert dropped.report.payload_bytes < full.report.payload_bytes
    r = restore(dropped.data)
    r.finish()
    straight, _, _ = run_program(bundled_source("myprint"), ["3"])
    assert full.output + r.output == straight


def test_nil_policy_is_accepted_for_plain_programs():
    s = Session.boot(bundled_source("count"))
    cp = checkpoint(s, 1, REPLACE_WITH_NIL)
    assert restore(cp.data).finish() is None


def test_describe_structured_values():
    s = Session.boot("(lambda (_) (table 1))")
    value = s.finish()
    assert describe(s, value) == "<table>"
    assert describe(s, 2.5) == "2.5"


def test_fuel_applies_per_resume():
    from reflexec.errors import FuelExhausted

    s = Session.boot(bundled_source("count"), fuel=10_000)
    assert s.finish() is None
    with pytest.raises(FuelExhausted):
        Session.boot(bundled_source("factorial"), ["30"], fuel=50).finish()


# -- bench rows --------------------------------------------------------------

def test_scaling_rows_and_csv():
    rows = scaling_rows([5, 10, 15], repeats=1)
    assert [r["frame_count"] for r in rows] == [7, 12, 17]
    assert [r["result"] for r in rows] == [120.0, 3628800.0, float(math.factorial(15))]
    lin = linearity(rows)
    assert lin["increasing"]
    text = to_csv(rows, SCALING_FIELDS)
    assert text.splitlines()[0] == ",".join(SCALING_FIELDS)
    assert len(text.splitlines()) == 4


def test_dedup_rows_have_one_proto():
    rows = dedup_rows([5, 8])
    assert [r["proto_nodes"] for r in rows] == [1, 1]
    assert [r["function_nodes"] for r in rows] == [1, 1]
    assert set(rows[0]) == set(DEDUP_FIELDS)
