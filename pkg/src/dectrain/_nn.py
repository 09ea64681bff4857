"""Dense-layer helpers and Adam shared by the learner and decision nets."""
import numpy as np

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def uniform_init(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Adam:
    """Adam over a dict of arrays, with an optional per-array update mask.

    A masked-out entry keeps its value bitwise even when stale moments
    from an earlier phase are nonzero.
    """

    def __init__(self, params, lr):
        self.lr = lr
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step_count = 0

    def step(self, params, grads, masks=None):
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - ADAM_BETA1**t
        c2 = 1.0 - ADAM_BETA2**t
        for name, g in grads.items():
            mask = None if masks is None else masks.get(name)
            if mask is not None and not mask.any():
                continue
            m = self.m[name]
            v = self.v[name]
            m_new = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
            v_new = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g
            delta = self.lr * (m_new / c1) / (np.sqrt(v_new / c2) + ADAM_EPS)
            if mask is None:
                m[...] = m_new
                v[...] = v_new
                params[name] -= delta
            else:
                np.copyto(m, m_new, where=mask)
                np.copyto(v, v_new, where=mask)
                np.subtract(params[name], delta, out=params[name], where=mask)

    def state(self):
        return {
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
            "step_count": self.step_count,
        }

    def load_state(self, state):
        for k in self.m:
            self.m[k][...] = state["m"][k]
            self.v[k][...] = state["v"][k]
        self.step_count = int(state["step_count"])
