from .main import (KernelSpec, WeightEstimate, standardize, median_bandwidth, gaussian_kernel,
                   kmm_weights, kliep_weights, ulsif_weights, rulsif_weights, iwc_weights,
                   write_weights_csv)

__all__ = ["KernelSpec","WeightEstimate","standardize","median_bandwidth","gaussian_kernel",
           "kmm_weights","kliep_weights","ulsif_weights","rulsif_weights","iwc_weights",
           "write_weights_csv"]
