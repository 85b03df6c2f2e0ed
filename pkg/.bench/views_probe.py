"""Landscape structure vs n_views on a real-geometry phantom (criteria 2/3 design)."""
import statistics
import sys
import time

sys.path.insert(0, "/root/pkg/src")

from ct_protopt.optimizer import PpoHyper, SweepTable, exhaustive_search, train
from ct_protopt.phantom import PatientAttrs, generate
from ct_protopt.vct_engine import ScannerConfig

SWEEP_SEED = 11
ph = generate(PatientAttrs(bmi=24.0, sex="F", patient_id="probe"), 2, 5, spacing_mm=0.5)
print(f"probe phantom: body grid {ph.grid.shape}, lesions {[round(l.diameter_mm,1) for l in ph.lesions]}", flush=True)

for nv in (192, 288):
    cfg = ScannerConfig(n_views=nv)
    t0 = time.time()
    table = exhaustive_search(ph, cfg, SWEEP_SEED)
    dt = time.time() - t0
    table.to_csv(f"/root/pkg/.bench/probe_v{nv}.csv")
    rows = sorted((r for r in table.rows if r.valid), key=lambda r: -r.mean_d_prime)
    inv = sum(1 for r in table.rows if not r.valid)
    print(f"== views={nv}: sweep {dt:.0f}s  max={table.max_objective:.4f} invalid={inv}")
    for r in rows[:8]:
        print(f"   #{r.index:3d} {r.mean_d_prime:.4f}  {r.params.to_text()}")

    hits = 0
    steps_list = []
    for seed in range(10):
        net, log = train([ph], tables={"probe": table}, total_steps=100, hyper=PpoHyper(), seed=seed)
        gap = table.max_objective - log.best_so_far_curve("probe")[-1]
        if abs(gap) < 1e-12:
            hits += 1
        s = log.steps_to_global_max["probe"]
        if s is not None:
            steps_list.append(s)
    med = statistics.median(steps_list) if steps_list else None
    print(f"   ppo(100 steps): hit {hits}/10  med_uniq {med}", flush=True)
