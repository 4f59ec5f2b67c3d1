"""Shared numeric primitives: log-domain weight arithmetic and RNG streams."""

from dataclasses import dataclass

import numpy as np


class DegenerateWeightsError(ValueError):
    """Raised when every weight in a set is zero (all log weights are -inf)."""


def normalize_log_weights(log_w):
    """Normalise unnormalised log weights with a max-shift.

    Parameters
    ----------
    log_w : array_like
        One dimensional array of log-domain unnormalised weights. Entries may
        be ``-inf`` but at least one must be finite.

    Returns
    -------
    normalized : ndarray
        Probability vector summing to one.
    log_sum : float
        ``log(sum(exp(log_w)))``.
    """
    log_w = np.asarray(log_w, dtype=float)
    if log_w.ndim != 1 or log_w.size == 0:
        raise ValueError("log weights must be a non-empty 1-d array")
    if np.any(np.isnan(log_w)) or np.any(log_w == np.inf):
        raise ValueError("log weights contain nan or +inf")
    shift = log_w.max()
    if shift == -np.inf:
        raise DegenerateWeightsError("all weights are zero")
    w = np.exp(log_w - shift)
    total = w.sum()
    return w / total, float(shift + np.log(total))


def log_sum_exp_mean(log_w):
    """Return ``log(mean(exp(log_w)))`` computed with a max-shift."""
    log_w = np.asarray(log_w, dtype=float)
    if log_w.ndim != 1 or log_w.size == 0:
        raise ValueError("log_sum_exp_mean needs a non-empty 1-d array")
    shift = log_w.max()
    if shift == -np.inf:
        return -np.inf
    # constant vectors come back exactly
    return float(shift + np.log(np.mean(np.exp(log_w - shift))))


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream identified by ``(seed, stream_id)``.

    Equal pairs give bit-identical draws; distinct ``stream_id`` values are
    spawned as independent children of the same seed sequence.
    """

    seed: int
    stream_id: int = 0

    def generator(self):
        seq = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(seq))

    def substream(self, k):
        """Independent stream nested under this one (e.g. one per replicate)."""
        seq = np.random.SeedSequence(
            entropy=int(self.seed), spawn_key=(int(self.stream_id), int(k))
        )
        return np.random.Generator(np.random.PCG64(seq))


def as_generator(rng):
    """Coerce ``None``, an int seed, an :class:`RngStream` or a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    return np.random.default_rng(rng)
