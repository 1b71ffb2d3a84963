"""Two quick self-checks of the sampler.

1. Full-conditional check: for each update, compare the change in the
   conditional log-density with the change in the joint log-density.
2. Successive-conditional ("getting it right") check on a tiny model, once
   with the real sampler and once with a deliberately broken Z update.
   Standard errors use 50 batch means, which understate the error of slowly
   mixing statistics (component occupancy) when rounds are few; the
   acceptance suite uses 10,000 rounds.

    python3 demos/sampler_selfcheck.py [rounds]
"""
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from crossnet.geweke import geweke_harness                      # noqa: E402
from crossnet.gibbs import update_shared_similarity             # noqa: E402
from ratio_checks import CHECKS, max_discrepancy               # noqa: E402

rounds = int(sys.argv[1]) if len(sys.argv) > 1 else 3000

print("conditional vs joint log-density differences (20 random states each)")
for name in CHECKS:
    print(f"  {name:18s} {max_discrepancy(name, 20, seed=1):.1e}")

print(f"\nforward vs successive-conditional means, {rounds} rounds")
print(geweke_harness(rounds=rounds, seed=0).table())


def broken(state, data, hp, rng):
    return update_shared_similarity(state, data, hp, rng, half_count=False)


res = geweke_harness(rounds=rounds, seed=0, overrides={"shared_similarity": broken})
print(f"\nwith the -n_h/2 term dropped from the Z update: max |z| = {res.max_abs_z():.1f}")
