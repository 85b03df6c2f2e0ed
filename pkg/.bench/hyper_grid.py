"""Hyperparameter grid for the PPO study on real tiny landscapes."""
import itertools
import statistics
import sys
import time

sys.path.insert(0, "/root/pkg/src")

from ct_protopt.optimizer import PpoHyper, SweepTable, train

sys.path.insert(0, "/root/pkg/tests")
from conftest import TINY_SPECS, make_tiny_phantom

phantoms = [make_tiny_phantom(pid, bmi, sex, nles) for pid, bmi, sex, nles in TINY_SPECS]
pids = [p.attrs.patient_id for p in phantoms]
tables = {pid: SweepTable.from_csv(f"/root/pkg/.bench/tiny_{pid}.csv") for pid in pids}


def study(hyper, n_seeds=10):
    hit = {pid: 0 for pid in pids}
    evals = {pid: [] for pid in pids}
    uniq_final = {pid: [] for pid in pids}
    for seed in range(n_seeds):
        net, log = train(phantoms, tables=tables, total_steps=300, hyper=hyper, seed=seed)
        for pid in pids:
            curve = log.best_so_far_curve(pid)
            if abs(tables[pid].max_objective - curve[-1]) < 1e-12:
                hit[pid] += 1
            s = log.steps_to_global_max[pid]
            if s is not None:
                evals[pid].append(s)
            uniq_final[pid].append([r.unique_evals for r in log.records if r.patient_id == pid][-1])
    meds = {pid: (statistics.median(evals[pid]) if evals[pid] else None) for pid in pids}
    return hit, meds, uniq_final


t0 = time.time()
print("default:")
hit, meds, uniq = study(PpoHyper())
for pid in pids:
    print(f"  {pid}: hit {hit[pid]}/10 med_steps {meds[pid]} final_uniq {sorted(uniq[pid])}")

for ent, lr, bs in itertools.product([0.03, 0.1, 0.3], [3e-3, 1e-2], [15, 30]):
    h = PpoHyper(entropy_coef=ent, learning_rate=lr, batch_size=bs)
    hit, meds, uniq = study(h)
    worst = min(hit.values())
    medmax = max((m for m in meds.values() if m is not None), default=None)
    flag = " <-- PASS" if worst >= 8 and all(m is not None and m <= 234 for m in meds.values()) else ""
    print(f"ent={ent} lr={lr} bs={bs}: hits {[hit[p] for p in pids]} meds {[meds[p] for p in pids]} "
          f"uniq_mean {[round(statistics.mean(uniq[p]),1) for p in pids]}{flag}", flush=True)
print(f"wall {time.time()-t0:.1f}s")
