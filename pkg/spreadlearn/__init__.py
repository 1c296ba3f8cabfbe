"""
Private machine learning from randomised response: every data owner releases a single
corrupted copy of their datapoint and the learner fits the clean model by maximising the
spread likelihood.
"""

__version__ = '0.1.0'
