"""Toy instruction-based image editor fine-tuned with PPO on an attention reward.

The heavy lifting lives in the compiled ``_pixforge`` extension; this package
re-exports it.
"""

from ._pixforge import (  # noqa: F401
    CheckpointError,
    CommandError,
    ConfigError,
    EditWorld,
    attention_loss,
    clip_loss,
    config_keys,
    config_manifest,
    evaluate,
    groundtruth_attention,
    l1,
    l2,
    plot,
    pretrain,
    psnr,
    rollout,
    sample,
    ssim,
    total_reward,
    train,
)

__version__ = "0.1.0"
