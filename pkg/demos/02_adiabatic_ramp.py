"""
Ramping the tilt
================

Start from the zero-tilt eigenstates and ramp linearly to eps=70 over
T_max = 2e4 / t. The lowest singlet and triplet track their instantaneous
eigenstates; the second singlet does not.
"""

# %%
import numpy as np

from spincert import Geometry, ModelParams, TiltedHubbard, half_filling
from spincert.dynamics import TiltSchedule, evolve_state, sample_times, time_averaged_charge
from spincert.model import build_spin_squared
from spincert.spectral import low_spectrum

sector = half_filling(4)
model = TiltedHubbard(Geometry.chain(4), ModelParams(), sector)
S2 = build_spin_squared(sector)
start = {r.label: r for r in low_spectrum(model(0.0), S2, 8, sector=sector)}

# %%
ramp = TiltSchedule(T_max=2e4, eps_max=70.0)
times = sample_times(ramp, n=400, refine_eps=[13.35], refine_n=80)
for lab in ("S1", "T1", "S2"):
    traj = evolve_state(start[lab].vector.astype(complex), model, ramp, times=times, track=lab, keep_states=False)
    j = int(np.argmin(traj.fidelity))
    print(f"{lab}: min fidelity {traj.fidelity[j]:.4f} at eps {traj.epsilons[j]:.2f}, "
          f"final {traj.fidelity[-1]:.4f}, final charges {np.round(traj.profiles[-1], 3)}")

# %%
# Ramp to eps=35 and hold: the excited states oscillate, so only their
# time-averaged charges are stable.
hold = TiltSchedule(T_max=1e4, eps_max=35.0, hold=1e3)
times = np.concatenate([np.linspace(0, 1e4, 100), np.linspace(1e4, 1.1e4, 801)[1:]])
for lab in ("S2", "T2"):
    traj = evolve_state(start[lab].vector.astype(complex), model, hold, times=times, keep_states=False)
    print(f"{lab}: averaged over the hold {np.round(time_averaged_charge(traj, (1e4, 1.1e4)), 3)}")
