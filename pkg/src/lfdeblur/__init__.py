"""Joint blind motion deblurring, depth estimation, and 6-DOF camera-path
recovery from a single motion-blurred 4D light field."""

from .geometry import (
    CameraPath,
    Intrinsics,
    Pose,
    backproject,
    canonical_twist_sign,
    interpolate_pose,
    project,
    se3_exp,
    se3_log,
    warp_pixel,
)
from .lightfield import (
    DepthMap,
    LightField,
    load_depth,
    load_lightfield,
    save_depth,
    save_lightfield,
)
from .blur import (
    BlurSystem,
    WarpJacobians,
    apply_blur,
    assemble_blur_matrix,
    compute_warp_jacobians,
    transport_depth,
)
from .solver import (
    EnergyParams,
    EstimationState,
    energy,
    joint_estimate,
    joint_estimate_pyramid,
    make_initial_state,
    update_depth_pose,
    update_latent,
)
from .initialization import (
    LinearKernelField,
    estimate_linear_kernels,
    init_depth,
    inverse_depth_candidates,
    ransac_pose_init,
)
from .synth import (
    SceneSpec,
    make_default_scenes,
    make_scene,
    render_blurred_lf,
)
from .metrics import EvalReport, epe, l1_rel, psnr, psnr_ssim_best, ssim

__version__ = "0.1.0"
