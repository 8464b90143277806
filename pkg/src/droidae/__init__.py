"""Static APK feature extraction plus autoencoder-based malware detection."""

__version__ = "0.1.0"

from .apk import (
    ApkArchive,
    CertificateVerdict,
    open_archive,
    read_entry,
    scan_assets_for_apk,
    verify_certificate,
)
from .autoencoder import (
    Network,
    TrainConfig,
    backward,
    build_default_network,
    build_network,
    forward,
    reconstruction_error,
    reconstruction_errors,
    train,
)
from .axml import ManifestFacts, decode_axml, parse_plaintext_manifest
from .detector import (
    DetectorModel,
    EvalReport,
    LabeledDataset,
    ReconstructionDetector,
    calibrate_threshold,
    classify,
    evaluate,
    generate_synthetic_dataset,
    run_pipeline,
    run_split_sweep,
    split,
)
from .dex import ApiCatalog, ApiHits, default_catalog, scan_app_dex, scan_dex
from .features import (
    ApkReport,
    FeatureVector,
    FeatureVocabulary,
    default_vocabulary,
    extract_report,
    union_dimension,
    vectorize,
)
