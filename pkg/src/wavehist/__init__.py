"""Exact and sampling-based Haar wavelet histograms on a simulated map-reduce cluster."""

from .approx import (
    basic_sampling,
    coeff_variance_bound,
    improved_sampling,
    twolevel,
    twolevel_estimate,
    twolevel_map,
)
from .cluster import CommLedger, SplitDescriptor, partition_dataset, run_job, splits_for_m
from .dataset import DatasetMeta, SampleConfig, ZipfConfig, generate_zipf, read_meta, sample_split
from .exact import ProtocolError, hwtopk, send_coef, send_v
from .experiment import ExperimentConfig, run_experiment
from .wavelet import (
    TopK,
    compute_sse,
    haar_transform_2d,
    haar_transform_dense,
    haar_transform_sparse,
    inverse_transform,
    select_top_k,
)

__version__ = "0.1.0"
