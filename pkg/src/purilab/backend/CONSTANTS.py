"""Created on Oct 19 13:10:42 2026."""

ACTIVATIONS = ("relu", "sigmoid", "tanh", "softmax", "identity")
LOSSES = ("mse", "cross_entropy", "binary_cross_entropy")
OPTIMIZERS = ("sgd", "adam")

PURIFIER_MODES = ("base", "inv", "mem", "both")
REFERENCE_SOURCES = ("d2", "d1", "random")
ATTACK_KINDS = ("mlleaks", "mlleaks-a", "nsh", "label", "inversion")
DEFENSE_KINDS = ("none", "one_hot", "random_noise", "purifier")

# numerical guards
CE_CLAMP = 1e-12
DISCRIMINATOR_CLAMP = 1e-7
BN_MOMENTUM = 0.9
BN_EPS = 1e-5
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

SIMPLEX_TOL = 1e-6
MEMBERSHIP_THRESHOLD = 0.5
HISTOGRAM_BINS = 20
INVERSION_AUX_FRACTION = 0.8
NOISE_MAX_RETRIES = 100

NETWORK_FORMAT = "purilab.network"
REPORT_FORMAT = "purilab.report"
ATTACK_RESULT_FORMAT = "purilab.attack_result"
FORMAT_VERSION = 1

# shorthand keys accepted in YAML configs
TARGET_ATTRS = {"hidden": "hidden_dims", "lr": "learning_rate", "l2": "l2_weight_decay", "bs": "batch_size"}

PURIFIER_ATTRS = {
    "lambda": "lam",
    "lr_g": "lr_generator",
    "lr_G": "lr_generator",
    "lr_h": "lr_adversary",
    "lr_H": "lr_adversary",
    "lr_i": "lr_discriminator",
    "lr_I": "lr_discriminator",
    "bs": "batch_size",
}

SYNTHETIC_ATTRS = {"k": "num_classes", "d": "feature_dim", "density": "prototype_density", "noise": "flip_noise"}

ALLOCATION_ATTRS = {"d1": "d1_size", "d2": "d2_size", "d3": "d3_size"}

ATTACK_ATTRS = {"lr": "learning_rate", "bs": "batch_size", "top_k": "mlleaks_top_k"}

DEFENSE_ATTRS = {"noise": "magnitude"}

# matplotlib shorthand for the figure configs
HIST_ATTRS = {"c_member": "member_color", "c_nonmember": "nonmember_color", "ht": "histtype", "lw": "linewidth"}

SERIES_ATTRS = {"ls": "linestyle", "lw": "linewidth", "ms": "markersize", "c": "color"}
