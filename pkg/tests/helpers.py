import numpy as np

from evdepth.events import EventStream, EventWindow


def random_stream(rng, n, width=8, height=6, t_start=0, t_span=50_000):
    t = np.sort(rng.integers(t_start, t_start + t_span, n))
    return EventStream(width, height, rng.integers(0, width, n), rng.integers(0, height, n),
                       t, rng.choice([-1, 1], n))


def random_window(rng, n, width=8, height=6, t0=1000, dt=50_000):
    s = random_stream(rng, n, width, height, t0, dt)
    return EventWindow(t0, dt, width, height, s.x, s.y, s.t, s.p)
