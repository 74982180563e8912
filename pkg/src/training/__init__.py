"""
Semantic Inpainting Lab - Training Package
損失関数・埋め込みネットの事前学習・インペインティング学習・チェックポイント
"""
from .losses import (
    LossWeights,
    adversarial_loss,
    loss_d,
    loss_da,
    loss_dg,
    loss_ds,
    loss_i,
    reconstruction_loss,
)
from .checkpoint import (
    CheckpointData,
    load_checkpoint,
    restore_modules,
    restore_optimizers,
    save_checkpoint,
)
from .pretrain import (
    attribute_loss,
    evaluate_attribute_net,
    evaluate_segmentation_net,
    pretrain_attribute,
    pretrain_segmentation,
    segmentation_loss,
)
from .trainer import (
    TrainState,
    batch_for_step,
    build_state,
    load_embedding_nets,
    load_train_state,
    save_train_state,
    train,
    train_step,
)
