"""PPO machinery checks: gradients, normalization, synthetic-landscape training."""
import math
import numpy as np

from ct_protopt._seeds import philox
from ct_protopt import optimizer as opt
from ct_protopt.protocol_space import (
    ActionVector, ProtocolParams, decode, enumerate_canonical, iter_raw_actions,
)

# --- 1. multi-discrete prob normalization over all 540 raw actions ---------
net = opt.PolicyNetwork.init(seed=3)
obs = np.array([0.31, -1.0])
total = 0.0
for a in iter_raw_actions():
    total += math.exp(net.log_prob_of(obs, a))
print(f"sum of probs over 540 raw actions = {total!r}")
assert abs(total - 1.0) < 1e-9

# --- 2. analytic vs central finite-difference gradient ---------------------
rng = philox("gradcheck", 0)
batch = []
for i in range(4):
    o = (float(rng.normal()), float(rng.choice([-1.0, 1.0])))
    a = tuple(int(rng.integers(0, c)) for c in opt.HEAD_SIZES)
    av = ActionVector(a)
    lp = net.log_prob_of(np.array(o), av) + float(rng.normal(0, 0.1))  # off-policy old lp
    batch.append(opt.Transition(obs=o, action=a, log_prob=lp,
                                reward=float(rng.uniform(0.5, 5.0)),
                                value_estimate=float(rng.normal(0, 0.3))))
hyper = opt.PpoHyper()
loss0, grad, _ = opt.ppo_loss_and_grad(net, batch, hyper, entropy_coef=0.01)
flat = net.get_flat()
eps = 3e-5
idxs = rng.choice(net.n_params, size=250, replace=False)
max_rel = 0.0
# relative 1e-4 with an absolute floor absorbing FD roundoff (~1e-16/eps)
for j in idxs:
    f = flat.copy(); f[j] += eps
    net.set_flat(f)
    lp_ = opt.ppo_loss_and_grad(net, batch, hyper, entropy_coef=0.01)[0]
    f[j] -= 2 * eps
    net.set_flat(f)
    lm_ = opt.ppo_loss_and_grad(net, batch, hyper, entropy_coef=0.01)[0]
    num = (lp_ - lm_) / (2 * eps)
    rel = abs(num - grad[j]) / max(abs(num), abs(grad[j]), 1e-6)
    max_rel = max(max_rel, rel)
net.set_flat(flat)
print(f"gradcheck max rel err over 250 params: {max_rel:.2e}")
assert max_rel < 1e-4

# --- 3. zero-advantage case -------------------------------------------------
batch_eq = [opt.Transition(obs=(0.1, 1.0), action=(0,1,2,0,1,0), log_prob=-3.0,
                           reward=2.0, value_estimate=0.0) for _ in range(10)]
net2 = opt.PolicyNetwork.init(seed=5)
logits_before = net2.forward(np.array([[0.1, 1.0]]))[2].copy()
adam = opt.AdamState.init(net2.n_params)
opt.ppo_update(net2, batch_eq, opt.PpoHyper(epochs=1, value_coef=0.0), adam, entropy_coef=0.0)
logits_after = net2.forward(np.array([[0.1, 1.0]]))[2]
move = float(np.abs(logits_after - logits_before).max())
print(f"all-equal-rewards logit movement (entropy, value off): {move:.2e}")
assert move < 1e-6

# --- 4. synthetic landscape: does PPO find the max in 300 steps? -----------
# Build synthetic SweepTables whose rewards mimic the physics: strong mAs
# effect, kernel ordering, mild kv/slice/pixel effects + per-combination
# deterministic jitter. Then train on 3 patients x 10 seeds.
from ct_protopt.phantom import PatientAttrs, Phantom, Lesion

def synth_table(pid: str, seed: int) -> opt.SweepTable:
    combos = enumerate_canonical()
    rows = []
    rng = philox("synth", pid)
    kern_bonus = {"smooth": 1.0, "cosine": 0.8, "ramlak": 0.3, "sharp": 0.1, "enhancing": 0.0}
    for i, p in enumerate(combos):
        base = 1.2 * math.sqrt(p.tube_mas / 25.0)
        base += kern_bonus[p.kernel.value]
        base += 0.25 * (p.tube_kv == 100) + 0.1 * (p.tube_kv == 120)
        base += 0.35 * (p.slice_mm == 1.0)
        base += 0.15 * (p.pixel_mm == 0.5)
        base += 0.1 * (0.8 - p.filter_f50)
        base += float(rng.normal(0, 0.05))
        rows.append(opt.SweepRow(index=i + 1, params=p, valid=True,
                                 d_prime_per_lesion=(base,), mean_d_prime=base,
                                 noise_index=50.0, mtf_f50=0.6, mean_cnr=1.0,
                                 mean_accuracy=0.9))
    return opt.SweepTable(patient_id=pid, base_seed=seed, objective="mean",
                          rows=tuple(rows), argmax_index=opt._argmax_row(rows, "mean"))

def stub_phantom(pid: str, bmi: float, sex: str) -> Phantom:
    # metrics never run on cache hits, so a tiny grid suffices
    return Phantom(grid=np.zeros((8, 8), dtype=np.uint8), spacing_mm=1.0,
                   attrs=PatientAttrs(bmi=bmi, sex=sex, patient_id=pid),
                   lesions=(), fov_mm=8.0, body_ab=(3.0, 3.0))

tables = {f"p{i}": synth_table(f"p{i}", 0) for i in range(3)}
phs = [stub_phantom("p0", 22.0, "M"), stub_phantom("p1", 27.0, "F"), stub_phantom("p2", 33.0, "M")]

hits, uniques = 0, []
for s in range(10):
    env = opt.ProtocolEnv(phs, base_seed=0, tables=tables)
    netT, log = opt.train(phs, tables=tables, total_steps=300, seed=s, env=env)
    rep = opt.efficiency_report(log, tables)
    ok = rep["all_reached"]
    per = rep["per_patient"]
    gaps = [per[p]["gap"] for p in per]
    stm = [per[p]["steps_to_optimum"] for p in per]
    hits += all(g <= 1e-12 for g in gaps)
    uniques.append(max(u for u in stm if u is not None) if all(u is not None for u in stm) else 469)
    print(f"seed {s}: reached={ok} gaps={[f'{g:.3f}' for g in gaps]} steps_to_opt={stm}")
print(f"zero-gap seeds: {hits}/10; median max-unique {sorted(uniques)[5]}")
EOF_MARKER = None
