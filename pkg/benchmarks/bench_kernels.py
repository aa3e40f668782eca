"""Compare the numba and numpy kernel backends.

Times the ideal-code session kernel on the reference schedule and the
forward MDP walk kernel, and checks that both backends return identical
results for the same seed.

    python benchmarks/bench_kernels.py [--trials 2000] [--walks 200000]
"""

import argparse
import time

import numpy as np

from byzfusion import analysis, kernels, sim
from byzfusion.config import parse_config


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_sessions(trials, repeat):
    cfg = parse_config({
        "dmc": {"bsc": 0.1},
        "schedule": {"eps": 0.05, "beta": 0.3},
        "adversary": {"strategy": "mdp_optimal"},
        "trials": trials,
        "master_seed": 1,
    })
    sim.run_experiment(cfg, trials=2, backend="numba")  # compile / load cache
    res = {}
    for backend in ("numba", "numpy"):
        res[backend] = best_of(lambda: sim.run_experiment(cfg, backend=backend).to_json(), repeat)
    return res


def bench_walks(n_walks, repeat):
    eb = analysis.lemma1_bounds(0.3, 0.05, 20, 65)
    m = eb.mdp_params(0.3, 20)
    policy = analysis.solve_mdp(m).decision

    def run(backend):
        err, steps, _ = kernels.mdp_walks(np.random.default_rng(0), m, policy, length_mode=False,
                                          start="random", n_walks=n_walks, backend=backend)
        return err.tobytes() + steps.tobytes()

    run("numba")
    return {b: best_of(lambda: run(b), repeat) for b in ("numba", "numpy")}


def report(title, res, unit, count):
    t_nb, out_nb = res["numba"]
    t_np, out_np = res["numpy"]
    print(title)
    print(f"  numba  {t_nb:8.3f} s   {count / t_nb:12.0f} {unit}/s")
    print(f"  numpy  {t_np:8.3f} s   {count / t_np:12.0f} {unit}/s")
    print(f"  speedup x{t_np / t_nb:.1f}   identical output: {out_nb == out_np}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=2000)
    ap.add_argument("--walks", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    report(f"session kernel, reference schedule, {args.trials} trials",
           bench_sessions(args.trials, args.repeat), "sessions", args.trials)
    report(f"MDP walks, v=20, {args.walks} walks", bench_walks(args.walks, args.repeat), "walks", args.walks)


if __name__ == "__main__":
    main()
