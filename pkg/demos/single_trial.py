"""
A single closed-loop trial per method
-------------------------------------

Run the geofenced-unicycle scenario once with each filter and print the
per-step story: estimated position, barrier value on the true state, and
the certified bound where one exists. The certified filter parks its
reference point just inside the goal disc; the mean-based baseline rides
the boundary and crosses it.
"""

from cvarcbf.sim import ExperimentConfig, Method, run_trial

config = ExperimentConfig(k_v=2.0, k_w=0.5, master_seed=11)

for method in (Method.DETERMINISTIC, Method.DKW, Method.SUBGAUSSIAN):
    log = run_trial(config, method, config.master_seed, trial_index=0)
    print(f"\n=== {method.value} -> {log.outcome.value} "
          f"(violated={log.violated}, reached={log.reached})")
    for r in log.steps:
        line = (f"  t={r.step * config.dt:4.1f}s  "
                f"est=({r.estimated_mean[0]:+.3f}, {r.estimated_mean[1]:+.3f})  "
                f"h_true={r.barrier_true:+.4f}")
        if r.bound == r.bound:
            line += f"  bound={r.bound:+.4f}"
        print(line)
