import time
from ct_protopt.phantom import PatientAttrs, generate
from ct_protopt.vct_engine import ScannerConfig
from ct_protopt.optimizer import exhaustive_search

CFG = ScannerConfig(n_views=60, n_detectors=352, fov_mm=120.0)
SPECS = [("t-lo", 22.0, "F", 2), ("t-mid", 27.0, "M", 3), ("t-hi", 33.0, "F", 2)]
for pid, bmi, sex, nles in SPECS:
    ph = generate(PatientAttrs(bmi=bmi, sex=sex, patient_id=pid), nles, 17,
                  fov_mm=120.0, spacing_mm=0.25)
    t0 = time.time()
    table = exhaustive_search(ph, CFG, 11, workers=1)
    n_bad = sum(not r.valid for r in table.rows)
    table.to_csv(f".bench/tiny_{pid}.csv")
    print(f"{pid}: {time.time()-t0:.0f}s best#{table.argmax_index} "
          f"d'={table.max_objective:.4f} invalid={n_bad}", flush=True)
