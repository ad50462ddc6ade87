"""Semi-supervised segmentation via cost-sensitive disagreement.

Two extra decoder heads are trained with opposite misclassification costs;
pixels where their predictions disagree form the uncertain region. Unlabeled
data is then self-trained on the certain region and consistency-regularized
against a mean teacher on the uncertain region.
"""

from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .data import (DatasetSplit, SplitConfig, SyntheticConfig, augment,
                   generate, load_dataset, save_dataset, split)
from .losses import (ClassWeights, LossValue, certain_region_loss,
                     consistency_loss, supervised_loss, weighted_cross_entropy)
from .metrics import (MetricReport, confusion_counts, csi, dice, hausdorff,
                      jaccard, ppv, tpr)
from .model import (SegModel, build_model, build_teacher, forward_all,
                    forward_teacher, predict_labels)
from .trainer import (PseudoLabelCache, TrainConfig, TrainResult,
                      ema_update, evaluate, init_teacher, joint_epoch,
                      joint_train, predict, pretrain, relabel,
                      train_multiclass, train_semisupervised)
from .uncertainty import make_masks, mask_quality, softmax_threshold_mask

__version__ = "0.1.0"
