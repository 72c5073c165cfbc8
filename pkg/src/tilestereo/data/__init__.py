"""Stereo data: synthetic scenes, file formats and augmentation."""

from .augment import AugmentOptions, augment
from .netpbm import read_image, write_image
from .pfm import FormatError, read_pfm, write_pfm
from .queue import SampleQueue
from .synthetic import SceneConfig, StereoSample, constant_scene, gen_scene, photometric_error
