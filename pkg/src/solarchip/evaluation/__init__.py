from .metrics import (ContingencyTable, class_accuracies, contingency, derive_binary, image_metrics, psnr,
                      skill_scores, ssim)
from .probes import FlareClassifier, ProbeHead, TranslationProbe, run_translation_probe, train_probe
from .protocols import (ABLATION_ROWS, FEW_SHOT_FRACTIONS, DownstreamData, ablation_grid, downstream_data, few_shot,
                        nested_subsets, write_table)

__all__ = ["ABLATION_ROWS", "FEW_SHOT_FRACTIONS", "ContingencyTable", "DownstreamData", "FlareClassifier",
           "ProbeHead", "TranslationProbe", "ablation_grid", "class_accuracies", "contingency", "derive_binary",
           "downstream_data", "few_shot", "image_metrics", "nested_subsets", "psnr", "run_translation_probe",
           "skill_scores", "ssim", "train_probe", "write_table"]
