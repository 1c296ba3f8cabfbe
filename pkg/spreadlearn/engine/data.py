"""
Data classes for small value types shared across the engine: feature domains, dataset
provenance, channel validity verdicts and the experimental arms.
"""
from dataclasses import dataclass
from enum import Enum, auto
from typing import Optional

from spreadlearn.engine.errors import ConfigError


class FeatureKind(Enum):
    """
    The two kinds of feature the engine models.
    """
    DISCRETE = auto()
    CONTINUOUS = auto()


@dataclass(frozen=True)
class FeatureDomain:
    kind: FeatureKind
    num_states: Optional[int] = None

    def __post_init__(self):
        if self.kind == FeatureKind.DISCRETE and (self.num_states is None or self.num_states < 2):
            raise ConfigError(f'a discrete domain needs at least two states, got {self.num_states}')

    @classmethod
    def discrete(cls, num_states: int):
        return cls(kind=FeatureKind.DISCRETE, num_states=num_states)

    @classmethod
    def continuous(cls):
        return cls(kind=FeatureKind.CONTINUOUS)

    @property
    def is_discrete(self):
        return self.kind == FeatureKind.DISCRETE

    def describe(self):
        if self.is_discrete:
            return f'discrete-{self.num_states}'
        return 'continuous'


@dataclass(frozen=True)
class Provenance:
    """
    Where a dataset came from. Corrupted datasets remember the channel and seed that
    produced them.
    """
    corrupted: bool = False
    channel_id: Optional[str] = None
    seed: Optional[int] = None

    @classmethod
    def clean(cls):
        return cls()

    @classmethod
    def corrupted_by(cls, channel_id: str, seed: int):
        return cls(corrupted=True, channel_id=channel_id, seed=seed)

    def describe(self):
        if not self.corrupted:
            return 'clean'
        return f'corrupted({self.channel_id}, {self.seed})'


class Reason(Enum):
    """
    Why a channel was accepted or rejected as spread noise.
    """
    VALID = 'valid'
    PASSTHROUGH = 'passthrough'
    ZERO_ENTRY = 'zero-entry'
    SINGULAR = 'singular'


@dataclass(frozen=True)
class SpreadVerdict:
    reason: Reason

    @property
    def valid(self):
        return self.reason in (Reason.VALID, Reason.PASSTHROUGH)

    def __bool__(self):
        return self.valid


class Arm(Enum):
    """
    The training approaches compared by an experiment, in declaration (legend) order.
    """
    CLEAN_LOGREG = 'clean-logreg'
    NOISY_LOGREG = 'noisy-logreg'
    SPREAD_FLAT = 'spread-flat'
    SPREAD_LEARNED = 'spread-learned'
    SPREAD_TRUE = 'spread-true'
    SPREAD_GAUSSIAN = 'spread-gaussian'

    @property
    def needs_discrete_inputs(self):
        return self in (Arm.SPREAD_FLAT, Arm.SPREAD_LEARNED, Arm.SPREAD_TRUE)
