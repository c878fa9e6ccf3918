"""From a flagged window to an insight report, fully offline.

1. train a detector on a reduced corpus;
2. score the last day and pick a window the detector flags;
3. explain it with LIME and Kernel SHAP;
4. render the zero-shot prompt and send it to a stand-in provider that
   answers with a stored reference insight;
5. score the answer's readability and validate the report document.

Run: python demos/02_explain_one_window.py   (under 30 s on one core)
"""
from kpm_sentinel.gateway import LlmClient, ProviderConfig, canned_transport
from kpm_sentinel.lstm import TrainConfig
from kpm_sentinel.pipeline import detect, detection_metrics, explain_window, train_detector, \
    window_ref_from_row
from kpm_sentinel.prompt import reference_outputs
from kpm_sentinel.report import validate_report
from kpm_sentinel.synth import CorpusConfig, default_corpus

corpus = default_corpus(CorpusConfig(samples_per_ue=800, seed=1))
detector = train_detector(corpus, window=3, ratio=0.3, seed=0, config=TrainConfig(),
                          global_samples=30)
print("held-out metrics:", {k: round(v, 4) for k, v in detector.summary["test_overall"].items()})

day4 = detect(detector, corpus[corpus["day"] == 4])
print(f"day 4: {len(day4.windows)} windows, {int(day4.labels.sum())} flagged, "
      f"F1 {detection_metrics(day4).f1:.3f}")
row = max(day4.rows(), key=lambda r: r["probability"])
print(f"explaining window {row['window_id']} of {row['ue_id']} (p = {row['probability']:.4f})")

client = LlmClient(ProviderConfig("mock", base_url="http://mock.invalid/v1"),
                   canned_transport(reference_outputs()["zero_shot"]))
report = explain_window(detector, window_ref_from_row(row), "zero_shot", client=client)
validate_report(report.to_dict())

print("\ntop LIME rules:")
for rule, phi in report.lime.rules[:5]:
    print(f"  {rule:<32} {phi:+.5f}")
print(f"  surrogate R2 {report.lime.r2:.3f}{'  (low fidelity)' if report.lime.low_fidelity else ''}")
print("\ntop SHAP cells:")
for cell, phi in report.shap.top_cells(5):
    print(f"  {cell:<20} {phi:+.5f}")
print(f"  base {report.shap.base_value:.5f} + sum(phi) = {report.shap.model_output:.5f}")

print("\nprompt user message (first lines):")
print("\n".join(report.prompt.user_text.splitlines()[:6]))
r = report.readability
print(f"\ninsight readability: Flesch {r.flesch_reading_ease:.2f}, Fog {r.gunning_fog:.2f} ({r.fog_label})")
print("stage timings (ms):", {k: round(v, 1) for k, v in report.timing_ms.items()})
