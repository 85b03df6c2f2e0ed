"""10-seed PPO study on the real tiny-config landscapes (criteria 2/3)."""
import statistics
import sys
import time

sys.path.insert(0, "/root/pkg/src")

from ct_protopt.optimizer import PpoHyper, SweepTable, train
from ct_protopt.phantom import MaterialTable

sys.path.insert(0, "/root/pkg/tests")
from conftest import TINY_CFG, TINY_SPECS, make_tiny_phantom

phantoms = [make_tiny_phantom(pid, bmi, sex, nles) for pid, bmi, sex, nles in TINY_SPECS]
tables = {p.attrs.patient_id: SweepTable.from_csv(f"/root/pkg/.bench/tiny_{p.attrs.patient_id}.csv") for p in phantoms}
for pid, t in tables.items():
    print(f"{pid}: max={t.max_objective:.4f} best#{t.best_row.index} base_seed={t.base_seed}")

hit = {p.attrs.patient_id: 0 for p in phantoms}
evals = {p.attrs.patient_id: [] for p in phantoms}
t0 = time.time()
for seed in range(10):
    net, log = train(phantoms, tables=tables, total_steps=300, hyper=PpoHyper(), seed=seed)
    line = [f"seed {seed}:"]
    for p in phantoms:
        pid = p.attrs.patient_id
        curve = log.best_so_far_curve(pid)
        gap = tables[pid].max_objective - curve[-1]
        steps = log.steps_to_global_max[pid]
        if abs(gap) < 1e-12:
            hit[pid] += 1
        if steps is not None:
            evals[pid].append(steps)
        line.append(f"{pid} gap={gap:.4f} uniq={steps}")
    print("  ".join(line), flush=True)

print(f"wall {time.time()-t0:.1f}s")
for pid in hit:
    med = statistics.median(evals[pid]) if evals[pid] else None
    print(f"{pid}: zero-gap {hit[pid]}/10 (need >=8)  median-uniq {med} (need <=234)  n_reached={len(evals[pid])}")
