"""Central tolerance and tuning record.

Every numeric threshold used by more than one module lives here so that a run
can be audited from a single object. ``TOL`` is the process-wide default; the
pipeline functions accept an explicit ``tol`` argument to override it.
"""
from dataclasses import dataclass, asdict, replace


@dataclass(frozen=True)
class Tolerances:
    # polynomial / projection
    newton_tol: float = 1e-12
    newton_maxit: int = 50
    sample_residual: float = 1e-8
    grad_floor: float = 1e-4
    # geometry
    tol_cover: float = 1e-6
    cap_angle: float = 0.1
    # enumeration
    k1: float = 20.0
    k2: float = 20.0
    n_t: int = 256
    # coarse pre-screen of candidate lines (0 disables)
    screen_stride: int = 8
    # directions-only mode: best-ranked candidates tried per direction
    direction_tries: int = 256
    # curvature
    tol_cone: float = 1e-9
    restarts: int = 16
    # broadness
    adjacency_factor: float = 3.0
    # dichotomy constant, fitted once on a held-out suite (see tests)
    dichotomy_c: float = 0.25
    # sigma-4 verification
    sigma4_multistarts: int = 8

    def as_dict(self):
        return asdict(self)

    def with_(self, **kw):
        return replace(self, **kw)


TOL = Tolerances()
