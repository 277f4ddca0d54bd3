"""The documentation stays true: flags exist, the example reproduces."""

import json
import re
from pathlib import Path


from manta import synth
from manta.bundle import write_bundle
from manta.cli import build_parser
from manta.pipeline import check_expected, diff_reports, run_pipeline

ROOT = Path(__file__).resolve().parents[1]
EXAMPLE = ROOT / "docs" / "example"
DOC_FILES = [ROOT / "README.md", *sorted((ROOT / "docs").rglob("*.md"))]


def _help_flags() -> dict[str, set[str]]:
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    out = {}
    for name, sp in sub.choices.items():
        out[name] = {o for a in sp._actions for o in a.option_strings}
    out[""] = {o for a in parser._actions for o in a.option_strings}
    return out


def test_documented_flags_exist():
    flags = _help_flags()
    known = set().union(*flags.values())
    for doc in DOC_FILES:
        text = doc.read_text(encoding="utf-8")
        for line in re.findall(r"manta [a-z-]+[^\n`]*", text):
            cmd = line.split()[1]
            if cmd not in flags:
                continue
            for flag in re.findall(r"(?<![\w-])--[a-z][a-z-]*", line):
                assert flag in flags[cmd] | flags[""], f"{doc.name}: {cmd} has no flag {flag}"
        for flag in re.findall(r"`(--[a-z][a-z-]*)", text):
            assert flag in known, f"{doc.name}: unknown flag {flag}"


def test_documented_subcommands_exist():
    flags = _help_flags()
    readme = (ROOT / "README.md").read_text(encoding="utf-8")
    for cmd in flags:
        if cmd:
            assert f"manta {cmd}" in readme, f"README does not document {cmd}"


def test_example_bundle_regenerates_byte_identical(tmp_path):
    fresh = write_bundle(synth.generate_synthetic(synth.example_scenario()), tmp_path / "b")
    checked = EXAMPLE / "bundle"
    rel = sorted(p.relative_to(checked) for p in checked.rglob("*") if p.is_file())
    assert rel == sorted(p.relative_to(fresh) for p in fresh.rglob("*") if p.is_file())
    for f in rel:
        assert (checked / f).read_bytes() == (fresh / f).read_bytes(), str(f)


def test_example_report_matches():
    result = run_pipeline(EXAMPLE / "bundle")
    diffs = check_expected(result.report, EXAMPLE / "expected_report.json", tol=1e-9)
    assert not diffs, "\n".join(diffs)


def test_corrupted_report_lists_fields():
    expected = json.loads((EXAMPLE / "expected_report.json").read_text())
    bad = json.loads(json.dumps(expected))
    bad["mgas"] += 1e-3
    bad["success_curve"]["values"][3] = 0.0
    diffs = diff_reports(expected, bad)
    assert len(diffs) == 2
    assert diffs[0].startswith("mgas:") and diffs[1].startswith("success_curve.values[3]:")
