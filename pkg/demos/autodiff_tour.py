"""A short tour of the autodiff engine: build a loss, check its gradient, take steps.

    python3 demos/autodiff_tour.py
"""

import numpy as np

from trajclust import autodiff as ad
from trajclust.autodiff import ParamSet, grad_check
from trajclust.losses import cox_loss

rng = np.random.default_rng(0)
x = rng.standard_normal((50, 3))
true_beta = np.array([1.5, -1.0, 0.0])
times = rng.exponential(np.exp(-x @ true_beta))
events = rng.random(50) < 0.8

params = ParamSet()
params.add("beta", np.zeros((3, 1)))


def loss(p):
    return cox_loss(ad.reshape(ad.matmul(x, p["beta"]), (-1,)), times, events)


print(f"gradient check relative error: {grad_check(loss, params):.2e}")
for step in range(200):
    params.zero_grad()
    out = loss(params)
    out.backward()
    params.set_value("beta", params["beta"].value - 0.5 * params["beta"].grad)
print("fitted beta", np.round(params["beta"].value.ravel(), 2), "true", true_beta)
