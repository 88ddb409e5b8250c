"""Scratch harness: scan regimes against the binding acceptance orderings."""
import sys
import time
from dataclasses import replace

import numpy as np

from tcil import cli, cil, datagen


def crit_check(spread, mem, epochs, hidden, feat, seeds=(0, 1, 2, 3, 4), label=""):
    t0 = time.time()
    config = cli.default_experiment_config(
        stream=datagen.StreamConfig(blob_spread=spread),
        seeds=tuple(seeds),
        memory_capacity=mem,
        train=cil.TrainConfig(epochs=epochs),
        feature_dims=(hidden, feat),
    )
    records = cli.run_experiment(config)
    final = [r for r in records if r.task_index == 5]
    ece, temps, accs = {}, {}, {}
    for r in final:
        ece.setdefault(r.calibrator, []).append(r.ece_percent)
        temps.setdefault(r.calibrator, []).append(r.temperature)
        accs.setdefault(r.calibrator, []).append(r.accuracy)
    m = {k: np.mean(v) for k, v in ece.items()}
    mt = {k: np.mean(v) for k, v in temps.items()}
    c6a = m["tcil"] < m["ts_new_valid"] < m["vanilla"]
    c6b = m["tcil"] <= m["optimal_ts_oracle"] + 3.0
    c7 = all(m["tcil"] < m[k] for k in ("tcil_random", "tcil_closest", "tcil_farthest"))
    flag = "Y" if (c6a and c6b and c7) else " "
    print(
        f"{flag} sp={spread:.2f} M={mem:3d} ep={epochs:3d} h={hidden:3d} f={feat:2d}:"
        f" acc={np.mean(accs['vanilla']):.2f}"
        f" ece: van={m['vanilla']:5.1f} ts={m['ts_new_valid']:5.1f} tcil={m['tcil']:5.1f}"
        f" rnd={m['tcil_random']:5.1f} clo={m['tcil_closest']:5.1f} far={m['tcil_farthest']:5.1f}"
        f" orc={m['optimal_ts_oracle']:4.1f}"
        f" | T: ts={mt['ts_new_valid']:4.2f} tcil={mt['tcil']:4.2f} far={mt['tcil_farthest']:4.2f}"
        f" orc={mt['optimal_ts_oracle']:4.2f}"
        f" | c6a={int(c6a)} c6b={int(c6b)} c7={int(c7)} ({time.time()-t0:.0f}s)",
        flush=True,
    )


if __name__ == "__main__":
    for args in eval(sys.argv[1]):
        crit_check(*args)
