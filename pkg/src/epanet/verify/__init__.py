"""Independent numerical oracles: naive transcriptions, gradient checks,
receptive-field probes and topology cost reports."""

from .gradcheck import finite_diff_gradcheck
from .naive import (
    naive_batchnorm,
    naive_branch_softmax,
    naive_conv2d,
    naive_gap,
    naive_silu,
    naive_upsample_nearest,
)
from .oracles import (
    equation_oracle,
    oracle_bottleneck,
    oracle_c2f,
    oracle_cbs,
    oracle_fpn,
    oracle_msddsp,
)
from .probe import receptive_field_probe
from .reference import (
    brute_force_match,
    brute_force_nms,
    literal_ap_101,
    ref_iou,
    reference_evaluate,
)
from .report import TopologyReport, TopologyRow, topology_report

__all__ = [
    "finite_diff_gradcheck",
    "naive_batchnorm",
    "naive_branch_softmax",
    "naive_conv2d",
    "naive_gap",
    "naive_silu",
    "naive_upsample_nearest",
    "equation_oracle",
    "oracle_bottleneck",
    "oracle_c2f",
    "oracle_cbs",
    "oracle_fpn",
    "oracle_msddsp",
    "receptive_field_probe",
    "brute_force_match",
    "brute_force_nms",
    "literal_ap_101",
    "ref_iou",
    "reference_evaluate",
    "TopologyReport",
    "TopologyRow",
    "topology_report",
]
