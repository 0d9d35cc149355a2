"""Global constants"""

app_name = "prognost"

# Model file header
model_magic = "LSTMPROG"
model_version = "v1"

threads_env_var = "PROGNOST_THREADS"

# IMS snapshot files are named after their recording time, e.g. 2004.02.12.10.32.39
ims_filename_format = "%Y.%m.%d.%H.%M.%S"
ims_filename_pattern = r"^\d{4}\.\d{2}\.\d{2}\.\d{2}\.\d{2}\.\d{2}$"
ims_rows_per_snapshot = 20480

aggregation_methods = ("rms", "mean_abs", "peak")
default_aggregation = "rms"

loss_modes = ("mse", "bce")

# Stacked LSTM hyper-parameters
default_hidden_dims = (128, 64)
default_learning_rate = 0.001
default_batch_size = 50
default_epochs = 100
default_window = 5
default_split_ratio = 0.7
default_seed = 42
default_beta1 = 0.9
default_beta2 = 0.999
default_epsilon = 1e-8
forget_bias = 1.0

# Preprocessing
default_outlier_window = 11
default_outlier_k = 5.0
default_max_gap = 3

# Targets and predictions are clipped into (0, 1) before the cross-entropy
bce_clip = 1e-7

# Terms with |actual| below this are left out of MAPE
mape_zero_tolerance = 1e-8

grad_check_tolerance = 1e-4
