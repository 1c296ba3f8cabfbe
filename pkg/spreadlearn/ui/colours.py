from enum import Enum

from spreadlearn.engine.data import Arm


class Colour(Enum):
    CLEAN_LOGREG = '#1B1B1B'
    NOISY_LOGREG = '#D1495B'
    SPREAD_FLAT = '#33A1FF'
    SPREAD_LEARNED = '#B633FF'
    SPREAD_TRUE = '#2A9D8F'
    SPREAD_GAUSSIAN = '#E9A23B'
    IDENTITY = '#9E9E9E'
    IMAGE_BACKGROUND = '#FFFFFF'

    @classmethod
    def for_arm(cls, arm: Arm):
        return cls[arm.name]
