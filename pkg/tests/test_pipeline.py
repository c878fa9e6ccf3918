import copy
import json

import httpx
import numpy as np
import pytest

from kpm_sentinel.data import make_windows
from kpm_sentinel.gateway import LlmClient, ProviderConfig, canned_transport
from kpm_sentinel.lstm import ModelFormatError
from kpm_sentinel.pipeline import Detector, detect, detection_metrics, explain_window, window_ref_from_row
from kpm_sentinel.prompt import reference_exemplars
from kpm_sentinel.report import ReportError, validate_report


@pytest.fixture(scope="module")
def detection(small_detector, small_corpus):
    return detect(small_detector, small_corpus[small_corpus["day"] == 4])


@pytest.fixture(scope="module")
def flagged_row(detection):
    rows = list(detection.rows())
    return next(r for r in rows if r["label"] == 1)


def _client(text="- anomaly summary.\n- act now."):
    return LlmClient(ProviderConfig("mock", base_url="http://mock.test"), canned_transport(text))


def test_detector_learns_on_small_corpus(small_detector, detection):
    # a smoke bound for the small fixture; the full-corpus bar lives in the acceptance suite
    assert small_detector.summary["test_overall"]["f1"] > 0.7
    m = detection_metrics(detection)
    assert m.tp > 0 and m.f1 > 0.7


def test_save_load_round_trip(small_detector, tmp_path, detection, small_corpus):
    path = tmp_path / "model.bin"
    small_detector.save(path)
    back = Detector.load(path)
    assert back.params.equal(small_detector.params)
    np.testing.assert_array_equal(back.global_importance.Phi, small_detector.global_importance.Phi)
    again = detect(back, small_corpus[small_corpus["day"] == 4])
    np.testing.assert_array_equal(again.probabilities, detection.probabilities)


def test_missing_or_bad_sidecar(small_detector, tmp_path):
    path = tmp_path / "model.bin"
    small_detector.save(path)
    (tmp_path / "model.bin.meta.json").write_text("{}")
    with pytest.raises(ModelFormatError, match="model parse error"):
        Detector.load(path)
    (tmp_path / "model.bin.meta.json").unlink()
    with pytest.raises(ModelFormatError, match="missing sidecar"):
        Detector.load(path)


def test_detection_rows(detection, small_corpus):
    rows = list(detection.rows())
    assert len(rows) == len(make_windows(small_corpus[small_corpus["day"] == 4], 3))
    assert {"window_id", "ue_id", "probability", "label", "values", "true_label"} <= set(rows[0])
    assert "true_label" not in next(detection.rows(include_truth=False))


def test_explain_window_zero_shot(small_detector, flagged_row):
    report = explain_window(small_detector, window_ref_from_row(flagged_row), client=_client(),
                            lime_samples=500, shap_coalitions=256)
    doc = json.loads(report.to_json_text())
    validate_report(doc)
    assert doc["prediction"]["label"] == 1
    assert doc["insight"]["text"].startswith("- anomaly")
    assert doc["readability"]["stats"]["sentences"] == 2
    assert len(doc["lime"]["rules"]) == 42
    assert set(doc["timing_ms"]) == {"lime", "shap", "prompt", "llm", "readability"}


def test_explain_window_few_shot_and_provider_failure(small_detector, flagged_row):
    def down(request):
        return httpx.Response(503)
    client = LlmClient(ProviderConfig("m", base_url="http://x", max_retries=1),
                       httpx.MockTransport(down), sleep=lambda s: None)
    report = explain_window(small_detector, window_ref_from_row(flagged_row), "few_shot",
                            reference_exemplars(), client, lime_samples=200, shap_coalitions=128)
    doc = report.to_dict()
    validate_report(doc)
    assert doc["insight"] is None and doc["readability"] is None
    assert "TransportError" in doc["insight_error"] and doc["prompt"]["mode"] == "few_shot"


def test_explain_rejects_wrong_shape(small_detector, flagged_row):
    row = dict(flagged_row, values=np.zeros((2, 14)).tolist())
    with pytest.raises(ValueError, match="shape"):
        explain_window(small_detector, window_ref_from_row(row))


def test_report_validation_catches_inconsistency(small_detector, flagged_row):
    doc = explain_window(small_detector, window_ref_from_row(flagged_row), client=_client(),
                         lime_samples=200, shap_coalitions=128).to_dict()
    bad = copy.deepcopy(doc)
    bad["shap"]["window_id"] += 1
    with pytest.raises(ReportError, match="refers to window"):
        validate_report(bad)
    bad = copy.deepcopy(doc)
    bad["shap"]["base"] += 0.01
    with pytest.raises(ReportError, match="local accuracy"):
        validate_report(bad)
    bad = copy.deepcopy(doc)
    bad["extra"] = 1
    with pytest.raises(ReportError, match="schema"):
        validate_report(bad)
    bad = copy.deepcopy(doc)
    bad["insight"], bad["insight_error"] = None, "x"
    with pytest.raises(ReportError, match="readability"):
        validate_report(bad)
