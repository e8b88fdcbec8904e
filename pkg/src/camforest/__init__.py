"""Tree models on analog content-addressable memory.

Train hard decision trees and forests, soften them into sigmoid path models,
compile the paths onto two-FET CAM threshold arrays, and measure accuracy,
robustness, and cost with a behavioral simulator backed by a transistor-level
discharge model.
"""

__version__ = "0.1.0"

from .datasets import (Dataset, load_csv, load_idx, load_iris, load_mnist,
                       load_wdbc, normalize, denormalize, prepared, split)
from .hardtree import (DecisionTree, RandomForest, accuracy_dt, accuracy_rf,
                       load_forest, load_tree, predict_dt, predict_dt_classes,
                       predict_rf_classes, save_forest, save_tree,
                       train_dt, train_rf, tune_ccp_alpha)
from .softtree import (DEFAULT_BEHAVIOR, BehaviorParams, Condition, Path,
                       SoftForest, SoftTree, accuracy_sdt, accuracy_srf,
                       harden, init_sdt, init_srf, load_sdt, load_srf,
                       loss_sdt, node_prob, path_probs, predict_sdt,
                       predict_sdt_classes, predict_srf_classes, row_prob,
                       save_sdt, save_srf, sdt_gradient, train_sdt,
                       train_sdt_staged, train_srf)
from .cammap import (CamArray, apply_programming_error, load_array, map_sdt,
                     save_array, unmap)
from .camsim import (ExperimentReport, InferenceResult, VariationModel,
                     accuracy, infer, infer_classes, inject_variation,
                     ml_values, monte_carlo, monte_carlo_forest)
from .circuit import (CircuitParams, FitReport, Trace, calibrate_gain,
                      calibrate_write_offset, column_scaling_study,
                      device_current, discharge_row, fit_behavior,
                      fit_row_behavior, row_sense_sweep,
                      saturation_closed_form, sense, sense_rows,
                      t_sense_for_mismatch_level)
from .arch import (CostCalibration, CostReport, TiledPlan, estimate_cost,
                   load_plan, plan_tiling, reported_calibration, save_plan,
                   simulate_tiled)
from .robust import (attack_root, decision_surface, model_arrays,
                     root_features, variation_sweep)
