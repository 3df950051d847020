"""From a point on the ground to a bump on the feature map.

The attention mask is a Gaussian centred where a predicted robot-frame
position lands on the encoder's feature map. This walks one point through the
camera model and prints the resulting mask.
"""

import math

import numpy as np

from trajattn.geometry import AttentionCovariance, CameraRig, gaussian_mask, project_planar_to_featuremap
from trajattn.model import ModelConfig

rig = CameraRig()
geometry = ModelConfig(heads=()).geometry
print(f"camera {rig.height} m up, pitched {rig.pitch_deg:.0f} deg, {rig.image_w}x{rig.image_h} px; "
      f"feature map {geometry.feature_w}x{geometry.feature_h} at stride {geometry.s_out}")

# points straight ahead climb towards the horizon as they get further away
for ahead in (2.0, 4.0, 8.0, 16.0):
    uv, _ = project_planar_to_featuremap([[ahead, 0.0]], rig.extrinsics(), rig.intrinsics(), geometry)
    print(f"{ahead:5.1f} m ahead -> feature cell ({uv[0, 0]:.2f}, {uv[0, 1]:.2f})")

# a point 1 m to the left lands left of centre
xa, _ = project_planar_to_featuremap([[5.0, 1.0]], rig.extrinsics(), rig.intrinsics(), geometry)
mask = gaussian_mask(xa, AttentionCovariance("isotropic", [[math.log(0.5)]]), geometry.feature_w,
                     geometry.feature_h)[0]
np.set_printoptions(precision=2, suppress=True, linewidth=120)
print("mask for a point 5 m ahead and 1 m left (variance 0.5, so the peak can reach 2):")
print(mask)
