"""Walk through a single iteration: controls, fitted error models and the calibrated interval.

    python3 scripts/calibrate_one_iteration.py --scenario unmeasured-confounder --suitability random
"""

import argparse

import numpy as np

from empcal.calibrate import calibrate_ci, fit_error_model
from empcal.config import ErrorModelKind, ScenarioConfig
from empcal.harness import estimate_iteration
from empcal.metrics import Z95


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--scenario", default="unmeasured-confounder")
    p.add_argument("--suitability", default="random")
    p.add_argument("--subjects", type=int, default=50_000)
    p.add_argument("--negative-controls", type=int, default=5)
    p.add_argument("--iteration", type=int, default=0)
    p.add_argument("--seed", type=int, default=ScenarioConfig.seed)
    args = p.parse_args(argv)

    cfg = ScenarioConfig(
        scenario=args.scenario,
        suitability=args.suitability,
        n_subjects=args.subjects,
        n_negative_controls=args.negative_controls,
        n_iterations=args.iteration + 1,
        seed=args.seed,
    )
    est = estimate_iteration(cfg, args.iteration, with_positives=True)
    print(f"true effect {est.theta_true:+.4f}")
    o = est.outcome
    print(f"estimate    {o.theta_hat:+.4f}  se {o.se_hat:.4f}  "
          f"Wald [{o.theta_hat - Z95 * o.se_hat:+.4f}, {o.theta_hat + Z95 * o.se_hat:+.4f}]")
    print("\ncontrols (true effect, estimate, se)")
    for c in est.negatives + est.positives:
        print(f"  {c.true_effect:6.3f}  {c.theta_hat:+.4f}  {c.se_hat:.4f}")

    for kind in ErrorModelKind:
        controls = est.negatives if kind is ErrorModelKind.NULL else est.negatives + est.positives
        model = fit_error_model(controls, kind)
        cal = calibrate_ci(o, model)
        sd0 = float(np.asarray(model.bias_sd(0.0)))
        print(f"\n{kind.value} model: a={model.a:+.4f} b={model.b:+.4f} sd(0)={sd0:.4f} d={model.d:+.4f} "
              f"loglik={model.log_likelihood:.3f}")
        print(f"  calibrated {cal.theta_cal:+.4f} [{cal.ci_low:+.4f}, {cal.ci_high:+.4f}]  p={cal.p_cal:.4f}")


if __name__ == "__main__":
    main()
