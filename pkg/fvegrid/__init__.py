from .dualscheme import DirectionStrategy, DualStrategy, gaussian_duality, preset
from .harness import StudyConfig, run_study
from .meshgen import RectMesh, perturbed_family, perturbed_mesh, uniform_mesh
from .pdemodel import get_problem

__all__ = [
    'DirectionStrategy',
    'DualStrategy',
    'RectMesh',
    'StudyConfig',
    'gaussian_duality',
    'get_problem',
    'perturbed_family',
    'perturbed_mesh',
    'preset',
    'run_study',
    'uniform_mesh',
]
