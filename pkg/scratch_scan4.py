"""Scratch: criteria orderings with final-task and average-over-tasks ECE."""
import sys
import time

import numpy as np

from tcil import cil, cli, datagen


def crit_check(spread, mem, epochs, hidden, feat, seeds=(0, 1, 2, 3, 4)):
    t0 = time.time()
    config = cli.default_experiment_config(
        stream=datagen.StreamConfig(blob_spread=spread),
        seeds=tuple(seeds),
        memory_capacity=mem,
        train=cil.TrainConfig(epochs=epochs),
        feature_dims=(hidden, feat),
    )
    records = cli.run_experiment(config)
    cals = config.calibrators
    fin = {c: np.mean([r.ece_percent for r in records if r.calibrator == c and r.task_index == 5]) for c in cals}
    avg = {c: np.mean([r.ece_percent for r in records if r.calibrator == c]) for c in cals}
    tmp = {c: np.mean([r.temperature for r in records if r.calibrator == c and r.task_index == 5]) for c in cals}

    def checks(m):
        c6a = m["tcil"] < m["ts_new_valid"] < m["vanilla"]
        c6b = m["tcil"] <= m["optimal_ts_oracle"] + 3.0
        c7 = all(m["tcil"] < m[k] for k in ("tcil_random", "tcil_closest", "tcil_farthest"))
        return c6a, c6b, c7

    fa, fb, fc = checks(fin)
    aa, ab, ac = checks(avg)
    print(
        f"sp={spread:.2f} M={mem:3d} ep={epochs:3d} h={hidden:3d} f={feat:2d}"
        f" | FIN van={fin['vanilla']:4.1f} ts={fin['ts_new_valid']:4.1f} tcil={fin['tcil']:4.1f}"
        f" rnd={fin['tcil_random']:4.1f} clo={fin['tcil_closest']:4.1f} far={fin['tcil_farthest']:4.1f}"
        f" orc={fin['optimal_ts_oracle']:4.1f} [{int(fa)}{int(fb)}{int(fc)}]"
        f" | AVG tcil={avg['tcil']:4.1f} rnd={avg['tcil_random']:4.1f} clo={avg['tcil_closest']:4.1f}"
        f" far={avg['tcil_farthest']:4.1f} orc={avg['optimal_ts_oracle']:4.1f} [{int(aa)}{int(ab)}{int(ac)}]"
        f" | Tts={tmp['ts_new_valid']:4.2f} ({time.time()-t0:.0f}s)",
        flush=True,
    )


if __name__ == "__main__":
    for args in eval(sys.argv[1]):
        crit_check(*args)
