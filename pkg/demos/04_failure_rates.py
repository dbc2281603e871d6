"""Model-adjusted failure rates.

The ratio of examiner variability to total variability says how much of the
inconclusive behaviour to charge to examiners.  Plugging it into the
interpolation between "inconclusives correct" and "inconclusives incorrect"
gives a failure rate that neither ignores inconclusives nor counts every one
as an error.
"""

from dataclasses import replace

import numpy as np

from bbr import Conclusion, GroundTruth, Parameters, SamplerConfig, StudyDataset
from bbr import adjusted_failure_rates, build_contingency, decompose, fit, model_ratio, simulate_responses
from bbr.latent_model import skew_normal_sample

rng = np.random.default_rng(11)
n_examiners, n_items = 25, 20
config = SamplerConfig(chains=2, iterations=1500, warmup=750, seed=5)

# Same-source items here are hard and examiners fairly alike; on the
# different-source side examiners differ more.
settings = {
    GroundTruth.SAME_SOURCE: dict(omega=0.6, alpha=1.0, sigma_zeta=1.5, shift=1.0),
    GroundTruth.DIFFERENT_SOURCE: dict(omega=1.5, alpha=2.0, sigma_zeta=0.8, shift=0.0),
}

tables, ratios, observed = {}, {}, {}
for truth, s in settings.items():
    params = Parameters(
        theta=skew_normal_sample(rng, s["omega"], s["alpha"], n_examiners),
        zeta=rng.normal(s["shift"], s["sigma_zeta"], n_items),
        sigma_zeta=s["sigma_zeta"], omega=[s["omega"]], alpha=[s["alpha"]],
        item_ground_truth=[truth.value] * n_items,
    )
    study = simulate_responses(params, seed=int(rng.integers(1 << 31)))
    # simulated conclusions are always right; make 2% of them errors
    wrong = Conclusion.EXCLUSION if truth is GroundTruth.SAME_SOURCE else Conclusion.IDENTIFICATION
    responses = [replace(r, raw_conclusion=wrong.value, canonical=wrong)
                 if r.conclusive and rng.random() < 0.02 else r for r in study.responses]
    study = StudyDataset.from_responses(responses)

    key = (truth, "all")
    tables[key] = build_contingency(study)
    observed[key] = decompose(study).ratio
    ratios[key] = model_ratio(fit(study, sampler_config=config))

print(f"{'truth':<6} {'empirical':>9} {'model':>6} {'inc correct':>12} {'inc incorrect':>14} {'adjusted':>9}")
for row in adjusted_failure_rates(tables, ratios, observed):
    print(f"{row.ground_truth.value:<6} {row.obs_ratio:>9.3f} {row.model_ratio:>6.3f} {row.inc_correct:>12.4f} "
          f"{row.inc_incorrect:>14.4f} {row.model_failure:>9.4f}")
