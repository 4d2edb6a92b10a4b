"""Marker-gel tactile perception: shear-field tracking, depth from difference images, simulation."""
from .core import (DegenerateField, DepthMap, DifferenceImage, DimensionMismatch, Distortion,
                   DistortionMismatch, ShearConfig, ShearField, TactileError, TactileFrame,
                   difference_image, grid_anchors, read_depth_map, read_frame, read_shear_field,
                   validate_stream, write_depth_map, write_frame, write_shear_field)
from .flow import FlowEstimate, MarkerSet, TooFewMarkers, detect_markers, flow
from .shear import (Mode, ShearStats, ShearTracker, detect_phases, displacement_stat,
                    fusion_weight, slip_score, track)
from .sim import (IndenterKind, IndenterOutOfFrame, IndenterShape, Keyframe, LabeledScene,
                  SimScene, generate_dataset, peg_wiggle_scene, render_frame, render_sequence,
                  return_to_rest_scene, standard_objects)
from .depth import (DepthModel, DistortionModel, EmptySplit, SingularSystem, distort, evaluate,
                    fit_depth_model, predict_depth, rectify)

__version__ = "0.1.0"
