"""
Switching schedules for the two gradient families
=================================================

The symmetric schedule blocks both branches with one decaying probability.
The adaptive schedule watches two smoothed losses: while the spatial
sub-goal is far from solved it blocks the temporal branch almost always
(q near 1); as the spatial loss approaches the threshold, q relaxes to q0
and the temporal branch starts learning at full strength.
"""

import math

from semicoupled.optim import SwitchSchedule, gate_probabilities, update_q

# --- symmetric: a straight line down to zero ------------------------------
sym = SwitchSchedule(mode="stsgd", p_spatial=0.5, p_temporal=0.5, decay_steps=8)
print("symmetric decay over 8 steps:")
for step in range(0, 10, 2):
    ps, pt = gate_probabilities(sym, step)
    print(f"  step {step}: block spatial {ps:.3f}, block temporal {pt:.3f}")

# --- adaptive: driven by the two losses -----------------------------------
init = math.log(8.0)  # untrained 8-way cross entropy
ada = SwitchSchedule(mode="astsgd", q0=0.5, thresh=0.1, alpha=1.0,
                     init_main_loss=init)

print("\nadaptive ratio while the spatial loss anneals:")
main_loss = init
for spatial_loss in (init, 1.2, 0.6, 0.3, 0.15, 0.1, 0.05):
    # pretend the main loss improves once q lets temporal gradients through
    q = update_q(ada, spatial_loss, main_loss)
    ps, pt = gate_probabilities(ada, 0)
    print(f"  L_spatial={spatial_loss:5.2f}  ->  q={q:.3f} "
          f"(block spatial {ps:.3f}, block temporal {pt:.3f})")
    main_loss = max(0.2, main_loss * 0.7)

# Three pinned points of the update rule (also enforced by the tests):
at_thresh = update_q(SwitchSchedule(mode="astsgd", init_main_loss=init), 0.1, 2.0)
saturated = update_q(SwitchSchedule(mode="astsgd", init_main_loss=init), init, init)
midpoint = update_q(SwitchSchedule(mode="astsgd", init_main_loss=init),
                    (0.1 + init) / 2, (0.1 + init) / 2)
print("\nq at threshold:", at_thresh, " q at initial loss:", saturated,
      " q at midpoint:", midpoint)
