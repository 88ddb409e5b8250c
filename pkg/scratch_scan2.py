"""Scratch: profile-matching diagnostics at the final task."""
import sys
import time

import numpy as np

from tcil import calib, cil, cli, datagen, perturb


def diag(spread, mem, epochs, hidden, feat, seeds=(0, 1, 2), clip=True, dim=8, wd=2e-4):
    t0 = time.time()
    rows = []
    for seed in seeds:
        config = cli.default_experiment_config(
            stream=datagen.StreamConfig(blob_spread=spread, input_dim=dim),
            seeds=(seed,),
            memory_capacity=mem,
            train=cil.TrainConfig(epochs=epochs, weight_decay=wd),
            feature_dims=(hidden, feat),
            clip=clip,
        )
        stream = cli.build_stream(config, seed)
        st = cli.train_stream(stream, config, seed)[-1]
        test = stream.cumulative_test(5)
        acc, per_task = cil.evaluate(st.model, test, 1.0, stream.task_of_label)
        old_err = 1 - np.mean([per_task[t] for t in range(1, 5)])
        new_err = 1 - per_task[5]
        mem_acc, _ = cil.evaluate(st.model, st.memory.exemplars, 1.0)
        t_or = calib.optimal_ts_oracle(st.model, test)
        t_adv, rep = perturb.tcil_temperature(
            st, stream.valid_for_task(5), perturb.DirectionPolicy("tcil"),
            config.magsearch, clip=clip,
        )
        ece_or = 100 * calib.calibration_report(st.model, test, t_or).ece
        ece_adv = 100 * calib.calibration_report(st.model, test, t_adv).ece
        rows.append((acc, old_err, new_err, mem_acc, rep.t_target, rep.eps_adv,
                     rep.mispredict_old, rep.mispredict_new, t_adv, t_or, ece_adv, ece_or))
    r = np.array(rows).mean(axis=0)
    print(
        f"d={dim} sp={spread:.2f} M={mem:3d} ep={epochs:3d} h={hidden:3d} f={feat:2d}:"
        f" acc={r[0]:.2f} err(old/new)={r[1]:.2f}/{r[2]:.2f} mem={r[3]:.2f}"
        f" Ttgt={r[4]:.2f} eps={r[5]:.2f} flip(old/new)={r[6]:.2f}/{r[7]:.2f}"
        f" Tadv={r[8]:.2f} Torc={r[9]:.2f} ece(adv/orc)={r[10]:.1f}/{r[11]:.1f}"
        f" ({time.time()-t0:.0f}s)",
        flush=True,
    )


if __name__ == "__main__":
    for args in eval(sys.argv[1]):
        diag(*args)
