"""Evaluation: AUC and TPR at fixed FPR, the robustness battery, and report files."""

from .metrics import ScoreSet, roc_auc, roc_curve, tpr_at_fpr
from .report import ResultRow, emit_report, load_results, summary_table
from .robustness import BatteryRow, RobustnessSpec, build_transforms, robustness_battery, score_images
