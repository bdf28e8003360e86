"""keysig: keypoint signatures for volumetric images.

Fingerprints 3D volumes as compact keypoint signatures, computes pairwise
log-Jaccard distances across a dataset through one pooled approximate K-NN
index, and flags subject-ID labeling errors as robust statistical outliers,
with a review service for confirming and correcting labels.
"""

__version__ = "0.1.0"

from .curation import (  # noqa: F401
    ClassStats,
    Decision,
    Flag,
    FlagDirection,
    ImageMeta,
    RelationshipLabel,
    Suggestion,
    Verdict,
    apply_decisions,
    assign_labels,
    class_stats,
    flag_outliers,
)
from .descriptor import (  # noqa: F401
    Keypoint,
    Signature,
    assign_orientation,
    compute_descriptor,
    describe,
    rank_transform,
)
from .detector import (  # noqa: F401
    RawKeypoint,
    ScaleSpaceParams,
    build_dog_pyramid,
    detect,
    gaussian_blur,
)
from .knn import (  # noqa: F401
    DescriptorRecord,
    IndexParams,
    KdIndex,
    brute_force_query,
    build,
    records_from_signatures,
)
from .pairwise import (  # noqa: F401
    MatchParams,
    PairKey,
    PairScore,
    accumulate_matches,
    score_dataset,
    score_pair,
)
from .volume import (  # noqa: F401
    Volume,
    gamma_remap,
    gaussian_noise,
    load_volume,
    normalize,
    save_nifti,
    save_raw,
    synth_blobs,
)
