DEFAULT_TAU = 0.25
DEFAULT_LAMBDA = 0.15
DEFAULT_THETA = 0.3
DEFAULT_ITERATIONS = 10
DEFAULT_C_PRIME = 32

EPSILON_WIDE = 1e-12
EPSILON_STANDARD = 1e-7

NORMALIZED_MAX = 255.0

# Sobel pair under the correlation convention, scaled to a per-pixel derivative.
SOBEL_X = [[-0.125, 0.0, 0.125], [-0.25, 0.0, 0.25], [-0.125, 0.0, 0.125]]
SOBEL_Y = [[-0.125, -0.25, -0.125], [0.0, 0.0, 0.0], [0.125, 0.25, 0.125]]
DIVERGENCE_X = [[-1.0, 1.0]]
DIVERGENCE_Y = [[-1.0], [1.0]]
# Fixed forward differences for grad u, zero on the last column and row.
FORWARD_X = [[-1.0, 1.0]]
FORWARD_Y = [[-1.0], [1.0]]

FLOW_LEARNING_RATE_SCALE = 0.01
MOMENTUM = 0.9
CROSS_ENTROPY_FLOOR = 1e-12

FLO_MAGIC = 202021.25
CHECKPOINT_MAGIC = b"RFW1"
REC601_LUMA = (0.299, 0.587, 0.114)

MAX_FLOW_STAGES = 2

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_NUMERICAL = 4
EXIT_GRADCHECK = 5
EXIT_OUTPUT = 6
EXIT_DIMENSION = 7
