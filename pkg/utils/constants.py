# utils/constants.py
"""
Physical model, patch protocol and evaluation constants
"""

# Pixel scale: images are floats in [0, 1]; 8-bit constants are quoted in [0, 255]
PIXEL_MAX_8BIT = 255.0

# Shadow parameter search space
S_MAX = 10.0
B_LIMIT_8BIT = 25.0
B_LIMIT = B_LIMIT_8BIT / PIXEL_MAX_8BIT
UNBOUNDED_W_LIMIT = 10.0
UNBOUNDED_B_LIMIT = 1.0

# Patch protocol
DEFAULT_PATCH_SIZE = 128
DEFAULT_STRIDE = 32
EDGE_POLICIES = ('drop', 'snap')
PATCH_LABELS = ('N', 'B', 'F')

# Mask handling
DEFAULT_MORPH_RADIUS = 3
MASK_BINARIZE_THRESHOLD = 128 / PIXEL_MAX_8BIT
DEFAULT_VIDEO_EPSILON_8BIT = 40.0

# Evaluation protocol
EVAL_SIZE = 256
RMSE_DATASET_MODES = ('per_image', 'pooled')

# Loss weights (lambda_sm, lambda_mat, lambda_bd, lambda_adv)
DEFAULT_LAMBDA_SM = 10.0
DEFAULT_LAMBDA_MAT = 100.0
DEFAULT_LAMBDA_BD = 0.5
DEFAULT_LAMBDA_ADV = 0.5
SCORE_CLAMP_EPS = 1e-7
ADVERSARIAL_MODES = ('nonsaturating', 'literal')
ABLATIONS = ('bounds', 'bd', 'mat', 'sm', 'gan')

# Training defaults
DEFAULT_BATCH_SIZE = 96
DEFAULT_EPOCHS = 150
DEFAULT_LR_MATTE_D = 2e-4
DEFAULT_LR_PARAM = 2e-5
ADAM_BETAS = (0.5, 0.999)

# Files
IMAGE_EXTENSIONS = ['.png', '.jpg', '.jpeg']
WRITABLE_IMAGE_EXTENSIONS = ['.png']
CHECKPOINT_FORMAT_VERSION = 1
MANIFEST_FORMAT_VERSION = 1

SUBCOMMANDS = [
    'build-patches', 'train', 'remove', 'eval-istd', 'video-pseudo-gt',
    'eval-video', 'finetune', 'decompose', 'make-synthetic', 'regions'
]

# Error messages
ERROR_MESSAGES = {
    'FILE_NOT_FOUND': 'File not found',
    'INVALID_IMAGE_FORMAT': 'Image must decode as an 8-bit 3-channel image',
    'INVALID_MASK_FORMAT': 'Mask must decode as an 8-bit single-channel image',
    'SHAPE_MISMATCH': 'Array dimensions do not match',
    'NON_POSITIVE_SIZE': 'Target size must be positive',
    'PATCH_TOO_LARGE': 'Patch size exceeds image dimension',
    'PARAMS_OUT_OF_BOUNDS': 'Shadow parameters outside the search space',
    'NON_FINITE': 'Non-finite value encountered',
    'EMPTY_TRAINING_SET': 'Manifest needs at least one boundary and one non-shadow patch',
    'CHECKPOINT_INVALID': 'Checkpoint archive is not readable',
}
