"""Virtual endoscopic frame rendering and unpaired virtual-to-real image translation."""

from .losses import LossWeights, cycle_loss, gan_value, total_loss
from .nets import ArchitectureSpec, CycleGanModel, build_discriminator, build_translator
from .render import Camera, FlyThroughPath, RenderParams, TransferFunction, render_view
from .volume import CtVolume, load_volume, make_phantom

__version__ = "0.1.0"
