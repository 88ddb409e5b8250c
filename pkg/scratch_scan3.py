"""Scratch: subset-level temperature decomposition at the final task."""
import sys
import time

import numpy as np

from tcil import calib, cil, cli, datagen, nnet, perturb


def tfit(model, samples):
    xs, ys = datagen.stack_samples(samples)
    logits = nnet.forward_batch(model, xs).logits
    t = calib.temp_opt(list(zip(logits, ys.tolist())))
    probs = calib.probs_matrix(logits, 1.0)
    acc = float((probs.argmax(1) + 1 == ys).mean())
    conf = float(probs.max(1).mean())
    return t, acc, conf


def tfit_items(model, items):
    xs = np.stack([it.x_adv for it in items])
    ys = np.array([it.y for it in items])
    logits = nnet.forward_batch(model, xs).logits
    t = calib.temp_opt(list(zip(logits, ys.tolist())))
    probs = calib.probs_matrix(logits, 1.0)
    acc = float((probs.argmax(1) + 1 == ys).mean())
    return t, acc


def diag(spread, mem, epochs, hidden, feat, seed=0):
    t0 = time.time()
    config = cli.default_experiment_config(
        stream=datagen.StreamConfig(blob_spread=spread),
        seeds=(seed,),
        memory_capacity=mem,
        train=cil.TrainConfig(epochs=epochs),
        feature_dims=(hidden, feat),
    )
    stream = cli.build_stream(config, seed)
    st = cli.train_stream(stream, config, seed)[-1]
    new_classes = st.new_classes
    old_test = [s for s in stream.cumulative_test(5) if s.y not in new_classes]
    new_test = [s for s in stream.cumulative_test(5) if s.y in new_classes]
    old_ex = [s for s in st.memory.exemplars if s.y not in new_classes]
    new_ex = [s for s in st.memory.exemplars if s.y in new_classes]

    t_ot, a_ot, c_ot = tfit(st.model, old_test)
    t_nt, a_nt, c_nt = tfit(st.model, new_test)
    t_oe0, a_oe0, c_oe0 = tfit(st.model, old_ex)
    t_ne0, a_ne0, c_ne0 = tfit(st.model, new_ex)

    t_adv, rep = perturb.tcil_temperature(
        st, stream.valid_for_task(5), perturb.DirectionPolicy("tcil"), config.magsearch
    )
    old_items = rep.perturbed.group("old")
    new_items = rep.perturbed.group("new")
    t_oeP, a_oeP = tfit_items(st.model, old_items)
    t_neP, a_neP = tfit_items(st.model, new_items)
    t_or = calib.optimal_ts_oracle(st.model, stream.cumulative_test(5))

    print(f"sp={spread} M={mem} ep={epochs} h={hidden} f={feat} seed={seed} ({time.time()-t0:.0f}s)")
    print(f"  old test : T={t_ot:5.2f} acc={a_ot:.2f} conf={c_ot:.2f} | new test: T={t_nt:5.2f} acc={a_nt:.2f} conf={c_nt:.2f}")
    print(f"  old ex e0: T={t_oe0:5.2f} acc={a_oe0:.2f} conf={c_oe0:.2f} | new ex e0: T={t_ne0:5.2f} acc={a_ne0:.2f} conf={c_ne0:.2f}")
    print(f"  Ttgt={rep.t_target:.2f} eps={rep.eps_adv:.3f}")
    print(f"  old ex eP: T={t_oeP:5.2f} acc={a_oeP:.2f}            | new ex eP: T={t_neP:5.2f} acc={a_neP:.2f}")
    print(f"  T_adv={t_adv:.2f}  T_oracle={t_or:.2f}", flush=True)


if __name__ == "__main__":
    for args in eval(sys.argv[1]):
        diag(*args)
