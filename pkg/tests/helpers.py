from sinkhorn_descent.measures import new_discrete_measure


def random_measure(rng, n, d, low=0.0, high=1.0, uniform=False):
    pts = rng.uniform(low, high, size=(n, d))
    w = None if uniform else rng.uniform(0.2, 1.0, size=n)
    return new_discrete_measure(pts, w)
