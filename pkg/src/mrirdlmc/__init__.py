"""Dynamic MRI reconstruction with dictionary-learnt motion compensation.

A compressed-sensing reconstruction energy is coupled to a TV-L1 optical
flow whose field is sparsely represented over a learnt patch dictionary;
the joint nonconvex problem is solved by alternating primal-dual
subsolves. Synthetic phantoms, sampling masks, quality metrics and a CLI
round out the pipeline.
"""

from .config import SolverConfig, parse_config
from .cp import SaddleProblem, chambolle_pock
from .datagen import (Ellipse, PhantomSpec, acquire, make_mask,
                      make_mask_sequence, make_phantom, parse_phantom_spec)
from .dictionary import (FlowDictionary, SparseCodes, learn_dictionary,
                         sparse_code)
from .flow import flow_energy, solve_flow, tvl1_flow
from .joint import JointState, joint_reconstruct, total_energy, zero_filled
from .metrics import MetricReport, psnr, sequence_metrics, ssim
from .recon import recon_energy, reconstruct
from .tensorio import export_pgm, read_ndf, write_ndf

__all__ = [
    "SolverConfig", "parse_config", "SaddleProblem", "chambolle_pock",
    "Ellipse", "PhantomSpec", "acquire", "make_mask", "make_mask_sequence",
    "make_phantom", "parse_phantom_spec", "FlowDictionary", "SparseCodes",
    "learn_dictionary", "sparse_code", "flow_energy", "solve_flow",
    "tvl1_flow", "JointState", "joint_reconstruct", "total_energy",
    "zero_filled", "MetricReport", "psnr", "sequence_metrics", "ssim",
    "recon_energy", "reconstruct", "export_pgm", "read_ndf", "write_ndf",
]

__version__ = "0.1.0"
