"""Event-camera monocular depth toolkit without the network.

Event I/O and windowing, dense event representations, probabilistic depth
objectives with analytic gradients, sparsification-based evaluation, and a
synthetic event generator for end-to-end checks.
"""

__version__ = "0.1.0"

from .events import (  # noqa: E402
    Event,
    EventStream,
    EventWindow,
    event_mask,
    parse_events,
    read_events,
    save_events,
    window_events,
    write_events,
)
from .kernels import BACKEND  # noqa: E402
from .metrics import (  # noqa: E402
    MetricsReport,
    SparsificationCurve,
    absrel,
    confidence_mask,
    evaluate,
    evaluate_field,
    mae,
    rmse,
    sparsification,
)
from .representations import (  # noqa: E402
    RepTensor,
    ToreConfig,
    build_cstr,
    build_tore,
    build_voxel_grid,
    downsample,
    hflip,
    normalize_nonzero,
)
from .uncertainty import (  # noqa: E402
    EvidentialParams,
    GaussianParams,
    LogNormalParams,
    UncertaintyField,
    batch_loss,
    e2depth_inverse,
    e2depth_map,
    evidential_moments,
    evidential_nll,
    evidential_nll_grad,
    fit_pointwise,
    gaussian_nll,
    gaussian_nll_grad,
    lognormal_moments,
    lognormal_nll,
    lognormal_nll_grad,
    positivity,
)
