"""Seeded synthetic datasets used by the benchmarks and the docs."""

import numpy as np

from .pairs import Dataset


def two_gaussians(n: int = 200, d: int = 10, seed: int = 0,
                  separation: float = 3.0) -> Dataset:
    """Two spherical Gaussian classes with the given mean separation.

    Class means sit at +/- separation/2 along the all-ones direction, so
    the Bayes boundary is a single hyperplane and moderate class overlap
    remains; covariances are identity.
    """
    rng = np.random.default_rng(seed)
    half = n // 2
    shift = (separation / 2.0) * np.ones(d) / np.sqrt(d)
    a = rng.standard_normal((half, d)) - shift
    b = rng.standard_normal((n - half, d)) + shift
    features = np.vstack([a, b])
    labels = np.concatenate([np.zeros(half, dtype=np.int64),
                             np.ones(n - half, dtype=np.int64)])
    order = rng.permutation(n)
    return Dataset(features[order], labels[order])


def anisotropic_clusters(n: int = 300, seed: int = 0, informative: int = 2,
                         noise: int = 8, noise_scale: float = 5.0,
                         separation: float = 8.0) -> Dataset:
    """Two clusters separated only in a few informative dimensions.

    The informative dimensions hold unit-variance clusters whose means
    differ by separation in total, split evenly across those dimensions;
    the remaining dimensions are pure noise with standard deviation
    noise_scale, which inflates the 1-NN error under the Euclidean metric
    but is learnable away.
    """
    rng = np.random.default_rng(seed)
    half = n // 2
    labels = np.concatenate([np.zeros(half, dtype=np.int64),
                             np.ones(n - half, dtype=np.int64)])
    signal = rng.standard_normal((n, informative))
    # each informative dim carries separation/sqrt(informative) so the
    # between-means distance is separation regardless of dim count
    signal[labels == 1] += separation / np.sqrt(informative)
    static = noise_scale * rng.standard_normal((n, noise))
    features = np.hstack([signal, static])
    order = rng.permutation(n)
    return Dataset(features[order], labels[order])
