import time
from ct_protopt import optimizer as opt
from ct_protopt.phantom import PatientAttrs, generate

attrs = PatientAttrs(bmi=26.5, sex="M", patient_id="bench-01")
ph = generate(attrs, n_lesions=3, seed=11)
t0 = time.time()
table = opt.exhaustive_search(ph, seed=0, workers=1)
dt = time.time() - t0
table.to_csv("/root/pkg/.bench/sweep_bench01.csv")
best = table.best_row
print(f"WALL {dt:.1f}s")
print(f"BEST idx={best.index} {best.params.to_text()} mean_d'={best.mean_d_prime:.4f}")
vals = [r.mean_d_prime for r in table.rows if r.valid]
print(f"RANGE {min(vals):.3f}..{max(vals):.3f}  invalid={sum(not r.valid for r in table.rows)}")
