"""How many blocks a merchant should wait, and a simulation check of the formula."""

import numpy as np

from secureprune.consensus import attacker_success_probability, confirmations_required

for q in (0.1, 0.2, 0.3, 0.4, 0.45):
    print(f"attacker share {q:.2f}: {confirmations_required(q, 1e-4):4d} blocks for risk < 1e-4")

# the formula assumes the attacker's head start is Poisson; replay that directly
q, z, trials = 0.3, 10, 200_000
rng = np.random.default_rng(1)
p = 1 - q
deficit = z - rng.poisson(z * q / p, size=trials)
won = deficit <= 0
for _ in range(400):
    live = ~won & (deficit < 60)
    deficit[live] += np.where(rng.random(live.sum()) < q, -1, 1)
    won |= deficit <= 0
print(f"q={q}, z={z}: formula {attacker_success_probability(q, z):.4f}, simulated {won.mean():.4f}")
