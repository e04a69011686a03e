import shlex
import subprocess
import sys

import pytest

from wfsim.cli import main
from wfsim.dsl import load_builtin


def records(text, kind):
    out = []
    for line in text.splitlines():
        if line.startswith("#") or not line:
            continue
        rec = dict(tok.split("=", 1) for tok in shlex.split(line))
        if rec["record"] == kind:
            out.append(rec)
    return out


def invoke(capsys, args):
    code = main(args)
    cap = capsys.readouterr()
    return code, cap.out, cap.err


def test_branches_table(capsys):
    code, out, _ = invoke(capsys, ["run", "fr", "--semantics", "unitary", "--branches", "--format", "kv"])
    assert code == 0
    brs = records(out, "branch")
    assert [(b["mem_Wbar"], b["mem_W"]) for b in brs] == [
        ("ok", "ok"), ("ok", "fail"), ("fail", "ok"), ("fail", "fail")
    ]
    for b, w in zip(brs, [1 / 12, 1 / 12, 1 / 12, 3 / 4]):
        assert abs(float(b["weight"]) - w) <= 1e-12
    assert brs[0]["note_W"] == "ok, so certain F=+1/2; Fbar=t; W=fail"


def test_clarify_table(capsys):
    code, out, _ = invoke(capsys, ["run", "fr", "--clarify", "--format", "kv"])
    assert code == 0
    vals = {r["quantity"]: float(r["value"]) for r in records(out, "clarify")}
    assert abs(vals["p(W=ok | Fbar=t)"]) <= 1e-12
    assert abs(vals["q(W=ok | Lbar=t)"] - 1 / 6) <= 1e-12
    assert abs(vals["q(W=ok, Lbar=t)"] - 1 / 12) <= 1e-12
    assert abs(vals["q(W=fail, Lbar=t)"] - 5 / 12) <= 1e-12
    # the text form labels which register q conditions on
    _, text, _ = invoke(capsys, ["run", "fr", "--clarify"])
    assert "re-measurement of Lbar" in text and "memory Fbar=t" in text


def test_mc_table(capsys):
    code, out, _ = invoke(capsys, ["run", "fr", "--mc", "100000", "--seed", "7", "--format", "kv"])
    assert code == 0
    rows = records(out, "mc")
    assert len(rows) == 4
    assert sum(int(r["count"]) for r in rows) == 100000
    assert all(r["within_4sigma"] == "true" for r in rows)


def test_condition_on_unitary_step_compares(capsys):
    code, out, _ = invoke(capsys, ["run", "fr", "--condition", "Fbar=t", "--format", "kv"])
    assert code == 0
    ok = [r for r in records(out, "compare") if r["target"] == "W=ok"][0]
    assert abs(float(ok["p"])) <= 1e-12 and abs(float(ok["q"]) - 1 / 6) <= 1e-12
    assert ok["agree"] == "false"


def test_mixed_semantics_and_halt(capsys):
    code, out, _ = invoke(
        capsys,
        ["run", "fr", "--semantics", "mixed:n:00=collapse", "--condition", "Fbar=t",
         "--halt", "n:11", "--format", "kv"],
    )
    assert code == 0
    p = {(r["agent"], r["outcome"]): float(r["p"]) for r in records(out, "outcome")}
    assert abs(p[("Fbar", "t")] - 1) <= 1e-12 and abs(p[("F", "+1/2")] - 0.5) <= 1e-12


def test_order_check(capsys):
    code, out, _ = invoke(capsys, ["run", "fr", "--order-check", "n:20,n:30", "--format", "kv"])
    assert code == 0
    (rec,) = records(out, "order")
    assert float(rec["max_deviation"]) <= 1e-12


def test_ledger_reports_violation(capsys):
    code, out, _ = invoke(capsys, ["run", "fr", "--ledger", "--q-full-run", "--format", "kv"])
    assert code == 0
    (v,) = records(out, "violation")
    assert v["branch"] == "Wbar=ok,W=ok" and v["agent"] == "W"
    q = [r for r in records(out, "q_rule") if r["agent"] == "Fbar" and r["given"] == "Fbar=t"][0]
    assert float(q["halted"]) == pytest.approx(1, abs=1e-12)
    assert float(q["full_run"]) == pytest.approx(5 / 6, abs=1e-12)


def test_scenario_file_argument(capsys, tmp_path):
    path = tmp_path / "fr_copy.scn"
    path.write_text(load_builtin("fr"))
    _, a, _ = invoke(capsys, ["run", str(path), "--branches", "--format", "kv"])
    _, b, _ = invoke(capsys, ["run", "fr", "--branches", "--format", "kv"])
    assert a.replace("fr_copy", "fr") == b


@pytest.mark.parametrize(
    "args",
    [
        ["run"],
        ["run", "fr", "--bogus"],
        ["run", "/no/such/file.scn"],
        ["run", "fr", "--semantics", "sometimes"],
        ["run", "fr", "--semantics", "collapse"],
        ["run", "fr", "--condition", "Fbar"],
        ["run", "fr", "--condition", "Fbar=x"],
        ["run", "fr", "--halt", "n:99"],
        ["run", "fr", "--mc", "0"],
        ["run", "fr", "--order-check", "n:00,n:20"],
    ],
)
def test_usage_errors_exit_1(capsys, args):
    code, out, err = invoke(capsys, args)
    assert code == 1 and out == "" and err.startswith("wfsim:")


def test_bad_scenario_file_exit_1(capsys, tmp_path):
    path = tmp_path / "bad.scn"
    path.write_text("register R 2 h,t\n")
    code, _, err = invoke(capsys, ["run", str(path)])
    assert code == 1 and "no init directive" in err


def test_zero_probability_exit_2(capsys):
    args = ["run", "fr", "--semantics", "collapse"]
    for c in ("Fbar=h", "F=+1/2", "Wbar=ok", "W=ok"):
        args += ["--condition", c]
    code, out, err = invoke(capsys, args)
    assert code == 2 and "zero-probability" in err and out == ""


def test_fail_on_violation_exit_3(capsys):
    assert invoke(capsys, ["run", "fr", "--fail-on-violation"])[0] == 3
    assert invoke(capsys, ["run", "fr", "--fail-on-violation", "--halt", "n:21"])[0] == 0


@pytest.mark.parametrize("fmt", ["text", "kv"])
def test_output_byte_identical_across_processes(fmt):
    cmd = [sys.executable, "-m", "wfsim", "run", "fr", "--branches", "--ledger", "--clarify",
           "--mc", "5000", "--seed", "3", "--format", fmt]
    a = subprocess.run(cmd, capture_output=True, check=True).stdout
    b = subprocess.run(cmd, capture_output=True, check=True).stdout
    assert a == b and a.endswith(b"\n")


def test_kv_floats_use_17_digits(capsys):
    _, out, _ = invoke(capsys, ["run", "fr", "--format", "kv"])
    p = [r["p"] for r in records(out, "outcome") if r["agent"] == "Wbar" and r["outcome"] == "ok"][0]
    assert p == format(float(p), ".17g")
