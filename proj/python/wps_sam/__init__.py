"""Weakly-supervised part segmentation: a query prompter distilled from box labels."""

from ._wps_sam import *  # noqa: F401,F403
from ._wps_sam import WpsError, __doc__  # noqa: F401

__version__ = "0.1.0"
