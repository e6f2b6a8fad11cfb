from __future__ import annotations

import json
import os
from decimal import Decimal

import pytest

from ragfuzz.campaign import (
    CampaignReport,
    CampaignStore,
    emit_report,
    load_config,
    load_config_file,
    render_markdown,
    resume,
    run_campaign,
    validate_partition,
)
from ragfuzz.errors import ConfigError, ConfigMismatch, CorruptManifest
from ragfuzz.ledger import CostLedger
from ragfuzz.pipeline import CaseStatus
from ragfuzz.scenarios import build_tiny, materialize_scenario

GEN_STAGES = {"characteristics", "codegen", "repair", "mutation"}


# --- config validation ---

def minimal_config_dict() -> dict:
    return build_tiny().config


def test_zero_passes_rejected(tmp_path):
    data = minimal_config_dict()
    data["passes"] = []
    with pytest.raises(ConfigError) as exc:
        load_config(data, tmp_path)
    assert exc.value.field_path == "passes"


def test_bad_threshold_rejected(tmp_path):
    data = minimal_config_dict()
    data["rag"]["threshold"] = 3.0
    with pytest.raises(ConfigError) as exc:
        load_config(data, tmp_path)
    assert exc.value.field_path == "rag.threshold"


def test_missing_toolchains_rejected(tmp_path):
    data = minimal_config_dict()
    data["toolchains"] = []
    with pytest.raises(ConfigError):
        load_config(data, tmp_path)


def test_repair_attempts_capped(tmp_path):
    data = minimal_config_dict()
    data["generation"]["max_repair_attempts"] = 9
    with pytest.raises(ConfigError) as exc:
        load_config(data, tmp_path)
    assert "hard cap" in str(exc.value)


def test_gate_must_reference_known_compiler(tmp_path):
    data = minimal_config_dict()
    data["gate"]["compiler_id"] = "ghost"
    with pytest.raises(ConfigError) as exc:
        load_config(data, tmp_path)
    assert exc.value.field_path == "gate.compiler_id"


def test_mock_mode_requires_scenario(tmp_path):
    data = minimal_config_dict()
    data["providers"] = {"mode": "mock"}
    with pytest.raises(ConfigError):
        load_config(data, tmp_path)


def test_config_hash_tracks_content(tmp_path):
    a = load_config(minimal_config_dict(), tmp_path)
    changed = minimal_config_dict()
    changed["campaign"]["seed"] = 999
    b = load_config(changed, tmp_path)
    assert a.config_hash != b.config_hash
    assert a.config_hash == load_config(minimal_config_dict(), tmp_path).config_hash


def test_yaml_config_loads(tmp_path):
    import yaml

    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(minimal_config_dict()))
    config = load_config_file(path, overrides={"campaign.seed": 777})
    assert config.seed == 777


# --- end-to-end campaign against the scripted scenario ---

def test_report_counts_match_scenario_expectation(tiny_campaign):
    expected = tiny_campaign.scenario.expected_report
    assert tiny_campaign.report.per_pass == expected["per_pass"]


def test_findings_match_seeded_divergences_exactly(tiny_campaign):
    expected = tiny_campaign.scenario.expected_report["findings"]
    got = tiny_campaign.report.findings
    assert got["per_case"] == expected["per_case"]
    assert got["per_axis"] == expected["per_axis"]
    assert got["total_flagged"] == expected["total_flagged"]


def test_report_partition_holds(tiny_campaign):
    assert validate_partition(tiny_campaign.report.per_pass)
    counts = tiny_campaign.report.per_pass["DeviceGlobals"]
    assert counts["compiled"] + counts["failed"] == counts["generated"]


def test_campaign_is_bit_reproducible(tiny_campaign, tmp_path):
    report2 = run_campaign(tiny_campaign.config, tmp_path / "again")
    original = (tiny_campaign.campaign_dir / "report.json").read_bytes()
    second = (tmp_path / "again" / "report.json").read_bytes()
    assert original == second
    assert report2.to_canonical_dict() == tiny_campaign.report.to_canonical_dict()


def test_findings_jsonl_line_count_matches_discrepancies(tiny_campaign):
    lines = [
        l
        for l in (tiny_campaign.campaign_dir / "findings.jsonl").read_text().splitlines()
        if l.strip()
    ]
    expected_pairs = sum(
        len(v) for v in tiny_campaign.scenario.expected_report["findings"]["per_case"].values()
    )
    assert len(lines) == expected_pairs
    for line in lines:
        record = json.loads(line)
        assert {"case_id", "kind", "axis", "issue_class", "witness"} <= set(record)


def test_abandoned_case_repair_transcript_is_bounded(tiny_campaign):
    store = CampaignStore(tiny_campaign.campaign_dir)
    failed = [c for c in store.all_cases() if c.status == CaseStatus.ABANDONED]
    assert len(failed) == 1
    assert failed[0].abandon_reason == "compile_failed"
    assert len(failed[0].repair_transcript) == 5


def test_compiling_cases_have_balanced_sources(tiny_campaign):
    store = CampaignStore(tiny_campaign.campaign_dir)
    for case in store.all_cases():
        if case.status == CaseStatus.COMPILES:
            assert case.source.strip()
            assert case.source.count("{") == case.source.count("}")


def test_resume_of_completed_campaign_is_noop(tiny_campaign):
    before = (tiny_campaign.campaign_dir / "report.json").read_bytes()
    ledger_before = CostLedger(tiny_campaign.campaign_dir / "ledger.jsonl")
    gen_before = [e for e in ledger_before.entries() if e.stage in GEN_STAGES]
    report = resume(tiny_campaign.campaign_dir)
    after = (tiny_campaign.campaign_dir / "report.json").read_bytes()
    ledger_after = CostLedger(tiny_campaign.campaign_dir / "ledger.jsonl")
    gen_after = [e for e in ledger_after.entries() if e.stage in GEN_STAGES]
    assert before == after
    assert len(gen_before) == len(gen_after)
    assert report.per_pass == tiny_campaign.report.per_pass


def test_resume_with_mutated_config_refuses(tiny_campaign, tmp_path):
    changed_dict = json.loads(json.dumps(tiny_campaign.config.raw))
    changed_dict["campaign"]["seed"] = 4321
    changed = load_config(changed_dict, tiny_campaign.config.base_dir)
    with pytest.raises(ConfigMismatch):
        resume(tiny_campaign.campaign_dir, changed)
    with pytest.raises(ConfigMismatch):
        run_campaign(changed, tiny_campaign.campaign_dir)


def test_resume_requires_manifest(tmp_path):
    with pytest.raises(CorruptManifest):
        resume(tmp_path / "never_ran")


def test_corrupt_manifest_detected(tiny_campaign, tmp_path):
    import shutil

    clone = tmp_path / "clone"
    shutil.copytree(tiny_campaign.campaign_dir, clone)
    (clone / "manifest.json").write_text("{not json")
    with pytest.raises(CorruptManifest):
        resume(clone)


def test_no_secret_material_in_artifacts(tmp_path):
    secret = "s3cr3t-T0KEN-9f8e7d"
    os.environ["RAGFUZZ_TEST_SECRET"] = secret
    try:
        scenario = build_tiny()
        scenario.config["providers"]["llm"] = {"api_key_env": "RAGFUZZ_TEST_SECRET"}
        config_path = materialize_scenario(scenario, tmp_path / "work")
        config = load_config_file(config_path)
        campaign_dir = tmp_path / "campaign"
        run_campaign(config, campaign_dir)
        offenders = []
        for path in campaign_dir.rglob("*"):
            if path.is_file() and secret in path.read_text(errors="ignore"):
                offenders.append(path)
        assert not offenders
        snapshot = (campaign_dir / "config.snapshot.json").read_text()
        assert "RAGFUZZ_TEST_SECRET" in snapshot  # the name is fine, the value is not
    finally:
        del os.environ["RAGFUZZ_TEST_SECRET"]


def test_suppress_source_patterns_filters_findings(tmp_path):
    # suppressing sources that mention device_global removes case A and B
    # findings but keeps the campaign green
    scenario = build_tiny()
    scenario.config["report"]["suppress_source_patterns"] = ["device_global<int>"]
    config_path = materialize_scenario(scenario, tmp_path / "work")
    config = load_config_file(config_path)
    report = run_campaign(config, tmp_path / "campaign")
    assert report.findings["total_flagged"] == 0
    assert validate_partition(report.per_pass)


# --- report emission ---

def fixed_report() -> CampaignReport:
    return CampaignReport(
        per_pass={
            "DeviceGlobals": {
                "functions": 2,
                "characteristics": 2,
                "generated": 4,
                "compiled": 3,
                "failed": 1,
                "abandoned": 0,
            }
        },
        findings={
            "total_flagged": 1,
            "flagged_cases": ["DeviceGlobals.f0.s0"],
            "per_axis": {"cross_compiler": 1},
            "per_kind": {"output_mismatch": 1},
            "per_case": {"DeviceGlobals.f0.s0": [["output_mismatch", "cross_compiler"]]},
        },
        cost={
            "input_tokens": 1000,
            "output_tokens": 200,
            "by_stage": {},
            "total_dollars": "0.042",
        },
        timing={"extract": 0.01},
    )


def test_emit_report_matches_goldens(tmp_path, fixtures_dir):
    report = fixed_report()
    json_path = emit_report(report, tmp_path, "jsonl")
    md_path = emit_report(report, tmp_path, "markdown")
    assert json_path.read_text() == (fixtures_dir / "golden" / "report.golden.json").read_text()
    assert md_path.read_text() == (fixtures_dir / "golden" / "report.golden.md").read_text()


def test_emit_report_zeroed_tables(tmp_path):
    report = CampaignReport(
        per_pass={},
        findings={"total_flagged": 0, "flagged_cases": [], "per_axis": {}, "per_kind": {},
                  "per_case": {}},
        cost={"input_tokens": 0, "output_tokens": 0, "by_stage": {}, "total_dollars": "0"},
    )
    md = render_markdown(report)
    assert "Flagged cases (union): **0**" in md
    path = emit_report(report, tmp_path, "jsonl")
    assert json.loads(path.read_text())["findings"]["total_flagged"] == 0


def test_emit_report_rejects_unknown_format(tmp_path):
    with pytest.raises(ValueError):
        emit_report(fixed_report(), tmp_path, "pdf")


def test_canonical_report_excludes_timing():
    assert "timing" not in fixed_report().to_canonical_dict()


def test_partition_validator_detects_violation():
    bad = {"P": {"functions": 1, "characteristics": 1, "generated": 5,
                 "compiled": 3, "failed": 1, "abandoned": 0}}
    assert not validate_partition(bad)
