"""Label-free physics-informed super-resolution for 2D linear elastostatics.

Coarse FEM solves provide low-resolution field grids; convolutional networks
upscale them 4x and are trained purely on PDE, constitutive, and boundary
residuals of their own output. High-resolution references enter only at
evaluation time.
"""

from .elasticity import (
    DIRICHLET,
    EDGES,
    NEUMANN,
    DomainSpec,
    LoadCase,
    MaterialParams,
    analytical_displacement,
    analytical_stress,
    analytical_traction,
    body_force,
    constitutive_stress,
    strain_from_grad,
)
from .errors import (
    CheckpointError,
    CliUsageError,
    DatasetError,
    ElastisrError,
    EvaluationError,
    FemSolveError,
    MeshError,
    NormalizerError,
    TrainingError,
)
from .fem import (
    CHANNELS,
    DEFAULT_COARSE_NODES,
    DEFAULT_FINE_NODES,
    ElasticitySolver,
    FieldGrid,
    Mesh,
    NodalSolution,
    assemble_and_solve,
    build_coarse_mesh,
    displacement_l2_error,
    recover_nodal_stress,
    sample_to_grid,
)
from .data import (
    Dataset,
    Sample,
    generate_dataset,
    load_dataset,
    manifest_hash,
    oracle_grid,
    save_dataset,
    split_indices,
)
from .residuals import (
    LossBreakdown,
    LossWeights,
    bc_residual,
    constitutive_residual,
    fd_gradient,
    pde_residual,
    total_loss,
)
from .models import (
    Fsrcnn,
    ModelConfig,
    Normalizer,
    Rdn,
    build_model,
    count_parameters,
)
from .training import (
    Checkpoint,
    TrainConfig,
    TrainData,
    TrainHistory,
    lbfgs_finetune,
    load_checkpoint,
    minimize_lbfgs,
    save_checkpoint,
    split_dataset,
    train,
)
from .evaluation import (
    EvalReport,
    bicubic_upsample,
    evaluate,
    model_reconstruction,
    relative_l2,
    render_contours,
)

__version__ = "0.1.0"
