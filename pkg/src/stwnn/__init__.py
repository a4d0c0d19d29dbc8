"""WiFi CSI activity recognition: synthetic channel data, multi-scale 3-D
volumes, a 3-D residual network with feature self-attention, and training,
evaluation and persistence tools."""

from .autodiff import Tensor, backward, grad_check
from .csi import (ActivitySpec, CsiFrame, CsiStream, MotionComponent,
                  amplitude, channel_apply, doppler_activity_spec, synth_stream)
from .dataio import (DatasetManifest, ManifestEntry, load_manifest, load_stream,
                     load_volumes, load_weights, peek_weights_config, save_stream,
                     save_volumes, save_weights, write_manifest)
from .network import (AttentionParams, GateHead, Model, NetworkConfig,
                      attention_forward, build_model, forward, residual_block_forward)
from .training import (EpochStats, Metrics, TrainConfig, combined_loss,
                       confusion_metrics, evaluate, masked_probs, one_hot,
                       predict, sgd_momentum_step, shift_consistency, train)
from .volumes import (SegmentationConfig, Volume3D, build_volume, group_by_segment,
                      multiscale_sample, normalize, segment_stream, segment_volumes,
                      stack_channels, stream_volumes, upsample)

__version__ = "0.1.0"
