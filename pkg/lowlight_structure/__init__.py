"""Structure-guided low-light image enhancement.

Appearance restoration (a plain U-Net) is refined by an enhancement module whose decoder
is conditioned on edge maps predicted by a style-based structure generator.
"""

__version__ = "1.0.0"
