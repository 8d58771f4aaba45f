import logging
from collections import Counter
from typing import Optional, Sequence

import numpy as np
import torch

from src.tensor.autodiff import DTYPE

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


class NoiseStream:
    """Seeded source of the standard normal and Bernoulli draws a forward pass consumes.

    Each draw is tagged with a key (usually the parameter name) so callers can
    audit how many samples a pass took per parameter.
    """

    def __init__(self, seed: Optional[int] = None, generator: Optional[torch.Generator] = None):
        if generator is None:
            generator = torch.Generator()
            generator.manual_seed(0 if seed is None else int(seed))
        self.generator = generator
        self.draws: Counter = Counter()

    def standard_normal(self, shape: Sequence[int], key: str = "") -> torch.Tensor:
        self.draws[key] += 1
        return torch.randn(tuple(shape), generator=self.generator, dtype=DTYPE)

    def keep_mask(self, shape: Sequence[int], keep_prob: float, key: str = "") -> torch.Tensor:
        self.draws[key] += 1
        probs = torch.full(tuple(shape), keep_prob, dtype=DTYPE)
        return torch.bernoulli(probs, generator=self.generator)

    def reset_counts(self):
        self.draws.clear()


def member_seeds(seed: int, count: int) -> list:
    """Independent child seeds for `count` ensemble members."""
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [int(child.generate_state(1, dtype=np.uint64)[0] % (2**63 - 1)) for child in children]
