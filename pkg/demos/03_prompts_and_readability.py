"""The shipped prompt fixtures and reference answers.

Renders the zero-shot and few-shot prompts from the transcribed fixture
inputs, shows their message layout and estimated token budgets, then scores
the two reference answers for readability.

Run: python demos/03_prompts_and_readability.py
"""
from kpm_sentinel.prompt import estimate_tokens, fixture_inputs, reference_exemplars, reference_outputs
from kpm_sentinel.readability import score_text

zero = fixture_inputs("zero_shot_query").render()
few = fixture_inputs("few_shot_query").render("few_shot", reference_exemplars())

for name, bundle in (("zero-shot", zero), ("few-shot", few)):
    roles = " -> ".join(m["role"] for m in bundle.messages())
    print(f"{name}: {roles}")
    print(f"  ~{estimate_tokens(bundle)} tokens, digest {bundle.digest()[:16]}")
print("\nzero-shot system text:", zero.system_text)
print("few-shot system text: ", few.system_text)

print("\nreadability of the reference answers")
for mode, text in reference_outputs().items():
    s = score_text(text)
    st = s.stats
    print(f"  {mode:<10} Flesch {s.flesch_reading_ease:6.2f}  Fog {s.gunning_fog:5.2f} ({s.fog_label})  "
          f"{st.sentences} sentences, {st.words} words, {st.syllables} syllables, "
          f"{st.complex_words} complex")
