from .center import center_svc
from .checkerboard import alternating_checkerboard_svc, fixed_checkerboard_svc
from .random_patch import random_patch_svc

support_mask_variant = ['alternating_checkerboard', 'fixed_checkerboard', 'center', 'random_patch']
mask_svc_map = {
    'alternating_checkerboard': alternating_checkerboard_svc,
    'fixed_checkerboard': fixed_checkerboard_svc,
    'center': center_svc,
    'random_patch': random_patch_svc,
}
