"""Training-free checkpoint merging toolkit (python surface).

Thin re-export of the compiled `_realmerge` module. Build the C++ tree
first and put its `bindings/` output directory on PYTHONPATH (the ctest
smoke tests do this automatically).
"""

from _realmerge import (
    Archive,
    auc,
    decode,
    default_merge_config,
    drop,
    drop_max,
    encode,
    gain_unseen,
    merge,
    run_protocol,
    sin_angle,
    tail_energy,
    thin_svd,
    truncate_rank,
    verify_theory,
)

__all__ = [
    "Archive",
    "auc",
    "decode",
    "default_merge_config",
    "drop",
    "drop_max",
    "encode",
    "gain_unseen",
    "merge",
    "run_protocol",
    "sin_angle",
    "tail_energy",
    "thin_svd",
    "truncate_rank",
    "verify_theory",
]
