"""Auto-encoding radiance fields for 3D-aware object manipulation.

An encoder extracts disentangled shape/appearance codes and a camera pose
from a single image; a conditional radiance-field decoder renders images
from those attributes. Training runs in three stages (adversarial decoder
pre-training, encoder pre-training on pseudo pairs, joint fine-tuning
with disentanglement losses). A CLI and an HTTP service expose encoding,
reconstruction, attribute swapping/interpolation and camera orbits.
"""

__version__ = "0.1.0"
