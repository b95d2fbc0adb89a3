from .image import (IngestionError, bilinear_resize, gaussian_blur, load_image, resize_shorter_side,
                    save_image)
from .synth import (CLASS_NAMES, TERRESTRIAL, UNDERWATER, DetectionSample, DomainDataset, synth_detection_set,
                    synth_domain_pair, underwater_style)
from .records import (Manifest, MixSpec, fingerprint, load_detection_dataset, load_domain_dataset,
                      mix_split, read_manifest, sample_fingerprint, save_detection_dataset,
                      save_domain_dataset, write_detections, write_manifest)
