"""swirpad: face presentation attack detection from SWIR band differences.

Pipeline stages: synthetic data generation, normalized band-difference
transforms, inter/intra-class ranking, floating subset selection,
training of three scorer families, and ISO-style evaluation reports.
"""

__version__ = "0.1.0"

from . import bandselect, dataset, evalkit, models, swirdiff, synthgen  # noqa: F401
