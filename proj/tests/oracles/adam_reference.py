"""Reference Adam trace for the unit tests (independent float64 oracle)."""
import numpy as np

def adam(p, grads, lr=0.01, b1=0.9, b2=0.999, eps=1e-8):
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    out = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p = p - lr * mhat / (np.sqrt(vhat) + eps)
        out.append((p.copy(), m.copy(), v.copy()))
    return out

p0 = np.array([0.5, -1.0, 2.0])
g = np.array([0.1, -0.2, 0.3])
for p, m, v in adam(p0, [g, g]):
    print("p", [repr(float(x)) for x in p])
    print("m", [repr(float(x)) for x in m])
    print("v", [repr(float(x)) for x in v])
