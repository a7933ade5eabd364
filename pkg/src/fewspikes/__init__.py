"""fewspikes: dual-mode spiking/quantized training on event-camera streams.

The toolkit couples a few-spikes neuron engine (K-step trains under decaying
thresholds) with a discrete-level surrogate network that shares its weights,
a 3-channel spatiotemporal event encoder, density-aware box-regression
losses, and per-inference energy models.
"""

from .dlnet import QuantizerConfig, activation_backward, activation_forward, clip, quantize, softmax_ce
from .energy import EnergyReport, OpCounts, count_ops, energy_ann, energy_fsn, energy_lif
from .events import (Event, EventStream, LabeledClip, SyntheticSceneSpec,
                     generate_scene, load_events, save_events)
from .losses import Box, StIouConfig, ciou, detection_loss, spiking_iou, st_iou_loss
from .mestor import MestorConfig, MestorFrame, encode
from .network import (LayerSpec, Network, SpikeStats, backward, convtiny, forward,
                      load_checkpoint, mlp2, save_checkpoint, verify_equivalence)
from .neurons import (FsnConfig, LifConfig, LReluConfig, SpikeTrain, fsn_decode,
                      fsn_encode, fsn_lrelu_decode, fsn_lrelu_encode, lif_step)
from .optim import AdamW, StepLR
from .train import EncodedDataset, LossSpec, TrainConfig, encode_clips, evaluate, train

__version__ = "0.1.0"
