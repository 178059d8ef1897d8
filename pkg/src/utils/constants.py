#!/usr/bin/env python3
"""
Constantes del laboratorio NTK
"""

# 🔬 Compuertas estadísticas (en errores estándar)
EQUALITY_GATE = 4.0      # igualdades de momentos (duality)
RECURSION_GATE = 3.0     # cocientes de momentos capa a capa y sign-flip

# Mínimos de draws
MIN_MOMENT_DRAWS = 1_000
MIN_FOURTH_MOMENT_DRAWS = 100_000
MIN_VARIANCE_DRAWS = 100

# Piso de redondeo relativo para z-scores emparejados
ROUNDING_FLOOR = 1e-10

# Media por debajo de la cual V = Var/E² no está definido
DEGENERATE_MEAN = 1e-12

# Kernel regression
DEFAULT_JITTER_FACTOR = 1e-8   # jitter = factor · traza(H) / m
TRAIN_FRACTION = 0.7
REFERENCE_DEPTH = 3            # profundidad de referencia para accuracy relativa

# Monte Carlo
FLOAT_BUDGET = 20_000_000      # floats por chunk

# 🧪 Defaults por experimento
EXPERIMENT_DEFAULTS = {
    "VARIANCE": {
        "draws": 5000,
        "input_dim": 784,
        "alpha_scale": 0.1,     # α_l = alpha_scale / L en ResNet
        "dense_alpha": 0.5,
        "branch_depth": 2,
        "widths": [16, 32, 64],
        "depths": [1, 2, 4, 8],
        "kinds": ["vanilla", "resnet", "densenet"],
    },
    "DUALITY": {
        "draws": 200_000,
        "width": 8,
        "depths": [2, 3, 4],
        "orders": [2, 4],
        "indices_per_arch": 5,
    },
    "MOMENTS": {
        "draws": 100_000,
        "widths": [8, 16, 32],
        "depth": 4,
        "kinds": ["relu", "linear"],
    },
    "KERNEL": {
        "draws": 100,
        "width": 256,
        "depth": 3,
        "pairs": 10,
        "input_dim": 16,
        "tolerance": 0.05,
    },
    "REGRESS": {
        "repeats": 3,
        "draws": 10,
        "widths": [10, 100, 500],
        "depths": [3, 6, 12],
        "kinds": ["vanilla", "resnet", "densenet"],
        "classes": 3,
        "samples": 120,
        "input_dim": 20,
        "separation": 1.5,
    },
}

# Columnas de los CSV de resultados
VARIANCE_COLUMNS = [
    "kind", "n", "L", "m", "alpha_summary", "diag", "draws",
    "mean_g", "var_g", "normalized_variance", "nv_stderr", "eta",
]
DUALITY_COLUMNS = [
    "arch", "n", "L", "k_layer", "k_sublayer", "order",
    "lhs_mean", "rhs_mean", "stderr", "z", "pass",
]
MOMENT_COLUMNS = ["kind", "n", "layer", "order", "observed", "stderr", "predicted", "z", "pass"]
SIGN_FLIP_COLUMNS = ["arch", "n", "L", "layer", "power", "mean", "stderr", "predicted", "z", "pass"]
KERNEL_COLUMNS = ["pair", "kind", "limit", "empirical", "relative_error"]
REGRESSION_COLUMNS = ["kind", "n", "L", "T", "repeat_count", "mean_accuracy", "std_accuracy"]

OUTPUT_FORMATS = ("csv", "jsonl")
