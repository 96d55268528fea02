"""Physics-driven hair simulation and per-frame control-image extraction."""
import warnings

# numba probes for a TBB threading layer and warns when the installed one is old;
# the workqueue/omp fallback is fine for us
warnings.filterwarnings("ignore", message=".*TBB.*")

__version__ = "0.1.0"
