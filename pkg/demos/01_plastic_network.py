"""A plastic controller on its own: no environment, no evolution.

Random ABCD coefficients drive a 3-8-2 network with random inputs.  We
watch when the weights change (only on Hebbian ticks) and confirm that max
normalization keeps every layer's largest weight at exactly 1.
"""
import numpy as np

from hebbian_attractors import (MAX_NORM, NetworkShape, PlasticNetwork, PlasticityRule, UpdateSchedule,
                                scheduled_step)
from hebbian_attractors.plasticity import random_coefficients

rng = np.random.default_rng(0)
shape = NetworkShape((3, 8, 2))

# controller at 20 Hz, plasticity at 5 Hz -> an update every 4th step
rule = PlasticityRule(random_coefficients(shape, rng), stabilization=MAX_NORM, window=10,
                      schedule=UpdateSchedule(f_nn=20, f_hebb=5))
net = PlasticNetwork(shape, window=rule.window)
net.randomize(rng)

print("step  updated  max|W0|  max|W1|  action")
for t in range(13):
    action = net.forward(rng.uniform(-1, 1, 3))
    updated = scheduled_step(net, rule, t)
    m0, m1 = (np.abs(w).max() for w in net.weights)
    print(f"{t:4d}  {str(updated):7s}  {m0:.4f}   {m1:.4f}   {np.round(action, 3)}")

# without normalization the same rule lets weights drift without bound
free = PlasticityRule(rule.layers, stabilization="none", window=10, schedule=rule.schedule)
net2 = PlasticNetwork(shape, window=10)
net2.randomize(np.random.default_rng(0))
for t in range(400):
    net2.forward(rng.uniform(-1, 1, 3))
    scheduled_step(net2, free, t)
print("\nafter 400 steps without normalization, max|W| per layer:",
      [f"{np.abs(w).max():.3g}" for w in net2.weights])
