import json
import math
from dataclasses import replace
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from ldprec.experiment import (
    ExperimentConfig,
    StageError,
    find_intersection,
    run_basic_grid,
    run_pipeline,
    run_sweep,
    run_tradeoff,
    validate_report,
)

GOLDEN = Path(__file__).parent / "golden" / "pipeline_small.json"

TINY = ExperimentConfig(train_size=300, test_size=150, profile_count=400, epochs=3, k_range=(1, 5))


def test_config_exclusive_fields():
    with pytest.raises(ValueError):
        ExperimentConfig(bloom_size=144, false_positive_rate=0.1)
    with pytest.raises(ValueError):
        ExperimentConfig(bloom_size=None)
    with pytest.raises(ValueError):
        ExperimentConfig(epsilon=0.8, f=0.5)
    with pytest.raises(ValueError):
        ExperimentConfig(train_size=0)


def test_config_round_trip_and_hash():
    cfg = ExperimentConfig(epsilon=1.2, hash_count=5)
    again = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    assert again.config_hash() == cfg.config_hash()
    assert replace(cfg, seed=1).config_hash() != cfg.config_hash()
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"bogus": 1})


def test_config_derivations():
    cfg = ExperimentConfig(bloom_size=None, false_positive_rate=0.1, epsilon=0.8, hash_count=4)
    assert cfg.bloom().m == 130
    assert cfg.privacy().budget().epsilon1 == pytest.approx(0.8)
    full = cfg.full_scale()
    assert (full.train_size, full.test_size, full.profile_count) == (20000, 10000, 80000)
    noiseless = ExperimentConfig(epsilon=None, f=0.0, p=0.0, q=1.0)
    assert math.isinf(noiseless.privacy().budget().epsilon2)


def test_noiseless_pipeline():
    cfg = ExperimentConfig(epsilon=None, f=0.0, p=0.0, q=1.0)
    rec = run_pipeline(cfg).records[0]
    assert rec["clustering_utility"] >= 0.99
    assert rec["decoder_accuracy"] >= 0.99


def test_report_byte_identical():
    a = run_pipeline(TINY).to_json()
    b = run_pipeline(TINY).to_json()
    assert a == b
    assert "timings" not in a


def test_report_schema_and_provenance():
    rep = run_pipeline(TINY)
    doc = rep.to_dict()
    validate_report(doc)
    assert all(r["config_hash"] == TINY.config_hash() for r in doc["records"])
    assert doc["provenance"] == {"config_hash": TINY.config_hash(), "seed": 0}
    assert set(rep.timings) >= {"generate", "perturb", "train", "evaluate", "cluster"}
    bad = dict(doc)
    del bad["records"]
    with pytest.raises(jsonschema.ValidationError):
        validate_report(bad)


def test_golden_pipeline():
    """Every number in the stored report is regenerated from its own config."""
    stored = json.loads(GOLDEN.read_text())
    cfg = ExperimentConfig.from_dict(stored["config"])
    assert cfg.config_hash() == stored["provenance"]["config_hash"]
    assert run_pipeline(cfg).to_json() == GOLDEN.read_text()


def test_stage_errors_name_the_stage():
    with pytest.raises(StageError) as exc:
        run_pipeline(replace(TINY, taxonomy="nope"))
    assert exc.value.stage == "generate"
    with pytest.raises(StageError) as exc:
        run_pipeline(replace(TINY, attack_category="cooking"))
    assert exc.value.stage == "evaluate"
    assert "stage 'evaluate'" in str(exc.value)


def test_sweeps_emit_one_record_per_point():
    cfg = replace(TINY, bloom_sizes=(48, 96), hash_counts=(3, 5), epsilons=(0.4, 2.0))
    for sweep, key, values in (("bloom_size", "m", (48, 96)), ("hash_count", "k", (3, 5)), ("epsilon", None, (0.4, 2.0))):
        rep = run_sweep(cfg, sweep)
        doc = rep.to_dict()
        validate_report(doc)
        assert [r["grid"][sweep] for r in doc["records"]] == list(values)
        if key:
            assert [r[key] for r in doc["records"]] == list(values)
    with pytest.raises(ValueError):
        run_sweep(cfg, "dropout")
    with pytest.raises(ValueError):
        run_sweep(replace(cfg, epsilons=()), "epsilon")


def test_find_intersection():
    x = [0.0, 1.0, 2.0]
    assert find_intersection(x, [0.0, 0.5, 1.0], [1.0, 0.5, 0.0]) == (1.0, 0.5)
    xs, ys = find_intersection(x, [0.2, 0.4, 0.6], [0.5, 0.45, 0.4])
    assert xs == pytest.approx(1.2) and ys == pytest.approx(0.44)
    assert find_intersection(x, [0.1, 0.2, 0.3], [0.7, 0.8, 0.9]) is None


def test_tradeoff_reports_no_intersection():
    rep = run_tradeoff(replace(TINY, tradeoff_epsilons=(0.1, 2.4)))
    doc = rep.to_dict()
    validate_report(doc)
    s = doc["summary"]["intersection"]
    assert s == "no intersection" or 0.1 <= s["epsilon"] <= 2.4
    assert [r["grid"]["epsilon"] for r in doc["records"]] == [0.1, 2.4]


def test_basic_grid():
    rep = run_basic_grid(replace(TINY, attack_trials=500), (0.1, 0.85), (3, 5))
    doc = rep.to_dict()
    validate_report(doc)
    assert len(doc["records"]) == 4
    assert all(0 <= r["success_rate"] <= 1 for r in doc["records"])
    assert rep.to_json() == run_basic_grid(replace(TINY, attack_trials=500), (0.1, 0.85), (3, 5)).to_json()
