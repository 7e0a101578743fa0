"""
Repeated-split benchmark
========================

The harness runs every method on the same split and center for each seed and
aggregates coverage and volume. The same sweep is available from the shell::

    lmve run --dataset synthetic:d=3,n=2,m=2000 --reps 5 --methods ge,nle,lmve,oracle --out report/
    lmve report report/
"""

from lmve.bench import ExperimentConfig, render_table, run_experiment

cfg = ExperimentConfig(
    dataset="synthetic:d=3,n=2,m=2000,seed=0",
    methods=("GE", "NLE", "LMVE", "oracle"),
    repetitions=3,
    train={"iters_init": 1000, "iters_train": 1000},
    out="demo_report",
)
report = run_experiment(cfg)
print(render_table(report.aggregates, "synthetic Gaussian, eta=0.9"))
for rec in report.records[:4]:
    print(rec["method"], rec["seed"], rec["split_checksum"], f"{rec['coverage']:.3f}")
