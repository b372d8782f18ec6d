import numpy as np

from phonotraj.alignment import FeaturalSegmentation


def random_fseg(
    rng: np.random.Generator,
    k: int | None = None,
    d: int | None = None,
    unknown_prob: float = 0.25,
    dur_range: tuple[float, float] = (0.03, 0.3),
    value_scale: float = 1.0,
    utt: str = "u",
) -> FeaturalSegmentation:
    """A structurally valid featural segmentation with a random unknown mask."""
    k = int(rng.integers(1, 9)) if k is None else k
    d = int(rng.integers(1, 7)) if d is None else d
    durs = rng.uniform(*dur_range, size=k)
    bounds = np.concatenate([[0.0], np.cumsum(durs)])
    Y = np.zeros((k + 2, 2))
    Y[1:-1, 0] = bounds[:-1]
    Y[1:-1, 1] = bounds[1:]
    Y[-1] = bounds[-1]
    t = Y.mean(axis=1)
    X = rng.normal(size=(k + 2, d)) * value_scale
    if unknown_prob > 0:
        X[rng.random((k + 2, d)) < unknown_prob] = np.nan
    X[0] = 0.0
    X[-1] = 0.0
    return FeaturalSegmentation(utt, X, Y, t)


def one_sided_derivative(f, x: float, h: float, side: int, order: int = 1) -> float:
    """Second-order one-sided finite difference that never crosses ``x``.

    ``side`` is +1 (use points at x, x+h, ...) or -1.  Needed at spline knots,
    where stencils straddling the knot pick up truncation error from the
    one-sided higher derivatives.
    """
    s = float(side)
    if order == 1:
        f0, f1, f2 = f(x), f(x + s * h), f(x + 2 * s * h)
        return s * (-3 * f0 + 4 * f1 - f2) / (2 * h)
    if order == 2:
        f0, f1, f2, f3 = f(x), f(x + s * h), f(x + 2 * s * h), f(x + 3 * s * h)
        return (2 * f0 - 5 * f1 + 4 * f2 - f3) / (h * h)
    raise ValueError(order)
