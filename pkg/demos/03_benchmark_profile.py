"""Generate a small suite, run both solvers and build performance profiles.

The same pipeline is available from the shell::

    lalopt gen --n 20 --m 13 --seed 0 --feasible-start --out suite/p0.json
    lalopt bench --suite suite --solvers lal,scp --parallelism 2 --out results.csv
    lalopt profile --in results.csv --metric iters --out profile.csv
"""

import tempfile
from pathlib import Path

from lalopt import bench
from lalopt.bench import GeneratorSpec, gen_qcqp

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    paths = []
    for seed in range(6):
        prob, x0 = gen_qcqp(GeneratorSpec(20, 13, seed=seed, convex_curvature=seed % 2 == 0))
        paths.append(tmp / f"qcqp_s{seed}.json")
        bench.write_problem(paths[-1], prob, x0)

    results = bench.run_suite(paths, list(bench.default_solvers().values()), parallelism=2)
    bench.write_results_csv(results, tmp / "results.csv")
    print((tmp / "results.csv").read_text())

    for metric in ("iters", "time"):
        print(f"profile over {metric}:")
        for curve in bench.performance_profile(results, metric):
            pts = ", ".join(f"({t:.2f}, {f:.2f})" for t, f in curve.points[:6])
            print(f"  {curve.solver}: {pts}{' ...' if len(curve.points) > 6 else ''}")
