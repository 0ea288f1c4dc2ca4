"""Build a small stacked LSTM and compare BPTT gradients with finite differences."""

import numpy as np

from tlforecast.lstm import (
    NetworkArchitecture,
    finite_difference_gradients,
    forward,
    init_network,
    max_relative_error,
    sample_loss_gradients,
)
from tlforecast.numkernel import SeededRng

rng = SeededRng(42)

# two LSTM layers (5 then 3 units) reading 4 features, plus a linear head
net = init_network(NetworkArchitecture(input_dim=4, hidden_dims=(5, 3)), rng)
print("parameters:", net.n_params())

# one window of 6 days
window = rng.normal_array(6 * 4).reshape(6, 4)
target = 0.25
pred, _ = forward(net, window)
print(f"prediction {pred:.6f}, target {target}")

loss, analytic = sample_loss_gradients(net, window, target)
numeric = finite_difference_gradients(net, window, target, eps=1e-5)
print(f"loss {loss:.6f}")

for k, (a, b) in enumerate(zip(analytic, numeric)):
    for name in a:
        err = max_relative_error([{name: a[name]}], [{name: b[name]}])
        print(f"layer {k} {name:<2} shape {str(a[name].shape):<9} max rel err {err:.2e}")

print("overall:", f"{max_relative_error(analytic, numeric):.2e}")

# halving eps shrinks the truncation error about fourfold
for eps in (2e-2, 1e-2, 5e-3):
    fd = finite_difference_gradients(net, window, target, eps)
    diff = np.sqrt(sum(np.sum((a[n] - b[n]) ** 2) for a, b in zip(analytic, fd) for n in a))
    print(f"eps {eps:.0e}: |analytic - fd| = {diff:.3e}")
