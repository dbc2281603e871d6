"""Is inconclusive behaviour driven by examiners or by items?

Two extreme hypothetical studies make the point.  In the first, two of eight
examiners answer everything inconclusive; in the second, one of four items is
inconclusive for everybody.  The marginal inconclusive rate is 25% in both,
but the ratio of examiner variance to total variance separates them.
"""

import numpy as np

from bbr import Conclusion, GroundTruth, StudyDataset, decompose
from bbr.study_data import Response


def study(incon):
    rows = []
    for i, j in np.ndindex(incon.shape):
        cat = Conclusion.INCONCLUSIVE if incon[i, j] else Conclusion.IDENTIFICATION
        rows.append(Response(f"E{i + 1}", f"I{j + 1}", GroundTruth.SAME_SOURCE, cat.value, cat,
                             sequence=len(rows)))
    return StudyDataset.from_responses(rows)


examiner_driven = np.zeros((8, 4), dtype=int)
examiner_driven[:2] = 1
item_driven = np.zeros((8, 4), dtype=int)
item_driven[:, 0] = 1

for name, m in (("examiner-driven", examiner_driven), ("item-driven", item_driven)):
    res = decompose(study(m))
    print(f"{name:<16} inconclusive rate {m.mean():.2f}  "
          f"var(examiner) {res.sigma2_I:.4f}  var(item) {res.sigma2_J:.4f}  ratio {res.ratio:.2f}")

# A realistic study sits in between.  Here examiners and items both matter.
rng = np.random.default_rng(7)
theta = rng.normal(0, 1.0, 40)
zeta = rng.normal(0, 1.5, 25)
p_incon = 1 / (1 + np.exp(theta[:, None] + zeta[None, :]))
mixed = (rng.random(p_incon.shape) < p_incon).astype(int)
res = decompose(study(mixed))
print(f"{'mixed':<16} inconclusive rate {mixed.mean():.2f}  "
      f"var(examiner) {res.sigma2_I:.4f}  var(item) {res.sigma2_J:.4f}  ratio {res.ratio:.2f}")
