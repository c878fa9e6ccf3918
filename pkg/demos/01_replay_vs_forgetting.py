"""Sequential day-by-day training with and without replay.

Trains the LSTM detector on a reduced synthetic four-day corpus, once with no
replay and once mixing 30% of past windows into each new day, then prints the
F1 of the final model on every day's held-out windows. Without replay the
model forgets the earlier attack types; with replay it keeps them.

Run: python demos/01_replay_vs_forgetting.py   (about a minute on one core)
"""
from kpm_sentinel.evaluation import run_sequential_days
from kpm_sentinel.lstm import TrainConfig
from kpm_sentinel.synth import CorpusConfig, default_corpus

corpus = default_corpus(CorpusConfig(samples_per_ue=800, seed=0))
print(f"corpus: {len(corpus)} records, {corpus['label'].mean():.2%} malicious, "
      f"days {sorted(int(d) for d in corpus['day'].unique())}")

exp = run_sequential_days(corpus, ratios=[0.0, 0.3], window=3, config=TrainConfig(),
                          seeds=[0, 1])
print("\nF1 of the final model on each day's test windows (mean of 2 seeds)")
print(exp.table4().round(3).to_string(index=False))

print("\nmean F1 over the days seen so far, after each training day")
series = exp.fig4_series().pivot(index="stage_day", columns="ratio", values="mean_f1_seen_days")
print(series.round(3).to_string())

print()
for r in exp.ratios:
    print(f"ratio {r}: previous-day F1 {exp.previous_day_f1(r):.3f}, "
          f"held-out F1 on all days {exp.overall(r)['f1']:.3f}")
gap = exp.previous_day_f1(0.3) - exp.previous_day_f1(0.0)
print(f"replay keeps {gap:+.3f} F1 on earlier days")
