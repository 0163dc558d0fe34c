from .decoder import Decoder, decode_features, load_decoder, save_decoder
from .raster import (Framebuffer, Projected, composite_pixel, kernel_alpha, project_gaussian,
                     project_gaussians, rasterize, rasterize_reference)

__all__ = ["Decoder", "Framebuffer", "Projected", "composite_pixel", "decode_features",
           "kernel_alpha", "load_decoder", "project_gaussian", "project_gaussians", "rasterize",
           "rasterize_reference", "save_decoder"]
