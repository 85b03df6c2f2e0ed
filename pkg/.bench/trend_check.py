import time
import numpy as np
from ct_protopt._seeds import derive_seed
from ct_protopt.iq_metrics import full_report
from ct_protopt.phantom import cohort
from ct_protopt.protocol_space import Kernel, ProtocolParams
from ct_protopt.vct_engine import ScannerConfig, acquire_and_reconstruct, forward_project

CFG = ScannerConfig(n_views=240)
N_SEEDS = 5

def proto(kv=120, mas=150, kern=Kernel.SMOOTH, f50=0.6):
    return ProtocolParams(kv, mas, kern, f50, 0.5, 0.5)

t0 = time.time()
members = cohort(5, 23, spacing_mm=0.25)
protos = {
    "mas25": proto(mas=25), "mas80": proto(mas=80), "mas150": proto(mas=150),
    "cosine": proto(kern=Kernel.COSINE), "sharp": proto(kern=Kernel.SHARP),
    "enhancing": proto(kern=Kernel.ENHANCING),
    "kv100": proto(kv=100), "kv140": proto(kv=140),
}
ok_a = ok_b = ok_c = True
for attrs, ph in members:
    sinos = {kv: forward_project(ph, kv, CFG) for kv in (100, 120, 140)}
    mean_d, mean_c = {}, {}
    for name, p in protos.items():
        ds, cs = [], []
        for k in range(N_SEEDS):
            seed = derive_seed("c6", attrs.patient_id, p.to_text(), k)
            img = acquire_and_reconstruct(ph, p, CFG, seed=seed, noiseless=sinos[p.tube_kv])
            rep = full_report(img, ph, roi_seed=derive_seed("c6roi", attrs.patient_id, name, k))
            ds.append(float(np.mean([l.d_prime for l in rep.lesions])))
            cs.append(float(np.mean([l.contrast for l in rep.lesions])))
        mean_d[name] = float(np.mean(ds))
        mean_c[name] = float(np.mean(cs))
    a = mean_d["mas25"] < mean_d["mas80"] < mean_d["mas150"]
    soft = (mean_d["mas150"] + mean_d["cosine"]) / 2
    hard = (mean_d["sharp"] + mean_d["enhancing"]) / 2
    b = soft > hard
    c = mean_c["kv100"] > mean_c["kv140"]
    ok_a &= a; ok_b &= b; ok_c &= c
    print(f"{attrs.patient_id} bmi={attrs.bmi:.1f}: "
          f"mas {mean_d['mas25']:.3f}/{mean_d['mas80']:.3f}/{mean_d['mas150']:.3f} a={a}  "
          f"soft {soft:.3f} vs hard {hard:.3f} b={b}  "
          f"contrast {mean_c['kv100']:.2f} vs {mean_c['kv140']:.2f} c={c}", flush=True)
print(f"ALL a={ok_a} b={ok_b} c={ok_c}  wall {time.time()-t0:.0f}s")
