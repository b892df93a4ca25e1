"""
Two-stage training against a plain baseline
===========================================

Top-200 subgraph of a synthetic graph. The baseline pre-trains for the
whole budget with uniform negatives. Booster pre-trains with filtered
negatives, mines hard positives, then fine-tunes on false negatives, hard
negatives and hard positives. Both get the same epoch budget.
"""

from tkgaug import data, evaluation, filtering, model, pipeline, synthetic, training

syn = synthetic.generate(synthetic.SyntheticSpec(n_entities=3000, n_relations=60, n_timestamps=120,
                                                 n_pairs=8000, n_families=10), seed=0)
sub = data.restrict_to_entities(syn.dataset, data.top_degree_entities(syn.dataset, 200))
d = data.add_inverse_relations(sub)
print(d.summary())

cfg = pipeline.PipelineConfig(
    filter=filtering.FilterParams(m=10, L_r=3, L_t=3, k_sparse=10),
    model=model.ModelConfig(dim=32, lr=0.1),
    schedule=training.TrainSchedule(epochs_total=40, pretrain_epochs=10, batches_per_epoch=10,
                                    n_neg=50, eval_every=5, patience=4),
    threads=1,
)
idx = data.build_indices(d, cfg.filter.L_r)
known = data.known_objects(d.train, d.valid, d.test)

cands, scored, summary = pipeline.augment_dataset(d, cfg, idx)
print("candidates:", summary["candidates"], summary["classification"])
aug = training.build_augmented_sets(cands, scored)

queries = d.test[:200, [0, 1, 3]]
reports, profiles = {}, {}
for name, augment in (("baseline", False), ("booster", True)):
    state, log = pipeline.train_model(d, cfg, aug, augment, idx)
    curve = [(r["epoch"], round(r["valid_mrr"], 3)) for r in log if "valid_mrr" in r]
    reports[name] = evaluation.evaluate(state, d.test, idx, known)
    profiles[name] = evaluation.preference_profile(state, queries, idx, top_n=10)
    print(name, "validation curve", curve)

for name, rep in reports.items():
    print(f"{name:8s} test MRR {rep.mrr:.4f}  H@10 {rep.hits[10]:.4f}  "
          f"per-timestamp std {rep.per_timestamp_std:.4f}")
    print("         by degree:", {k: round(v, 3) for k, v in rep.degree_strata.items()})

# how popular are the entities each model puts in its top 10?
for name, prof in profiles.items():
    print(name, "mean neighbour count of top-10 predictions", round(prof.entity_frequency, 1), "time span", round(prof.time_span, 1))
