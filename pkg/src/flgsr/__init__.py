"""Low-rank matrix recovery with a flexible group sparse regularizer."""

from .elam import ElamConfig, elam_solve
from .errors import DomainError, NumericalFailure, PGMFormatError
from .grouping import GroupPartition, make_partition
from .iral import InitKind, IralConfig, RecoveryResult, iral_solve, kkt_residual
from .linops import SamplingProblem
from .metrics import MetricReport, psnr, ssim
from .regularizer import CappedPhi, PhiKind

__version__ = "0.1.0"
