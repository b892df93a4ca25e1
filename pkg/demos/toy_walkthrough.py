"""
Filtering and scoring on a five-fact toy graph
==============================================

Three entities A, B, C and two relations. We look at which corruptions
the filters pick up and how the triangle structure scores each of them.
"""

import numpy as np

from tkgaug import data, filtering, scoring

A, B, C = 0, 1, 2
R1, R2 = 0, 1
facts = [(A, R1, B, 0), (B, R2, C, 0), (A, R1, C, 1), (A, R2, B, 1), (A, R1, B, 2)]
idx = data.build_index(facts, n_entities=3, n_relations=2, n_timestamps=3, L_r=3)

# degree counts distinct objects, so every fact here is sparse and gets filtered
params = filtering.FilterParams(m=2, L_r=3, L_t=3, k_sparse=3)
cands = filtering.filter_all(idx, params)
for c in cands:
    print(f"{c.provenance:9s} {c.source} -> {c.candidate}")

# one entity triangle (A, B, C) and two oriented relation triangles
ts = scoring.triangle_scores(idx)
print("entity triangles:", ts.entity.table())
print("relation triangles:", ts.relation.table())

# B bridges A and C, so (A, R1, C, 0) has a non-empty local structure
ls = scoring.build_local_structure((A, R1, C, 0), idx, L_e=3)
print("bridge items via B:", ls.layer(B))
print("aggregate score:", scoring.aggregate_score((A, R1, C, 0), ls, ts))

# a candidate is a false negative when its perturbed mean beats its source
scored = scoring.score_candidates(cands, idx, ts, scoring.ScoringParams(), seed=0)
for sc in scored:
    print(sc.candidate.candidate, sc.classification,
          f"mean {sc.mean_score:.3f} vs source {sc.source_score:.3f}")
print(scoring.classification_counts(scored))
print("perturbed scores of the first candidate:", np.round(scored[0].perturbed_scores, 3))
