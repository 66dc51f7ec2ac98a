"""Component network meta-analysis with forward interaction selection."""

__version__ = "0.1.0"

from .network import Network, read_csv  # noqa: E402
from .estimator import fit_cnma, fit_nma, fit_separate_nmas, q_difference_test  # noqa: E402
from .selector import forward_select  # noqa: E402
from .disconnector import enumerate_disconnected, minimal_set  # noqa: E402

__all__ = [
    "Network",
    "read_csv",
    "fit_cnma",
    "fit_nma",
    "fit_separate_nmas",
    "q_difference_test",
    "forward_select",
    "enumerate_disconnected",
    "minimal_set",
]
