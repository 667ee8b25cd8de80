"""
How often does a random audit catch a single cheat?
===================================================

With each boundary audited independently with probability q, a one-off
wallhack is visible to the next two audits, so it escapes with probability
(1-q)^2.
"""

import numpy as np

from nveaudit import detection_experiment

for q in np.round(np.linspace(0.1, 0.9, 5), 2):
    res = detection_experiment(float(q), trials=5000)
    print(f"q={q:.2f}  measured {res.rate:.3f}  analytic {res.analytic:.3f}")
