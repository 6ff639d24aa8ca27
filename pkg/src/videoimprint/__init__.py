"""Video imprints: align frame feature tensors on a toroidal grid with
counting-grid or epitome EM, aggregate the active grid locations into compact
video vectors for retrieval, and reason over imprint descriptors with a
memory-hop attention network that doubles as a recounting engine."""

from .errors import ConfigError, DomainError, NumericalError, ParseError, VideoImprintError
from .numerics import (PcaModel, avg_pool_3x3, l1_normalize, l2_normalize,
                       log_softmax, pca_fit, pca_project, pca_whiten_project,
                       power_normalize, softmax, toroidal_window_sum,
                       toroidal_window_sum_ending)
from .features import (DatasetManifest, FeatureSequence, ManifestEntry, SynthSpec,
                       bilinear_resize, downsample_to_tessellation, load_manifest,
                       read_features, save_manifest, synth_event_dataset,
                       synth_two_shot_sequence, write_features)
from .tcg import (CountingGrid, load_counting_grid, save_counting_grid,
                  tcg_e_step, tcg_fit, tcg_free_energy, tcg_init, tcg_m_step)
from .epitome import (Epitome, epitome_e_step, epitome_fit, epitome_init,
                      epitome_log_likelihood, epitome_m_step,
                      epitome_two_step_fit, load_epitome, save_epitome)
from .imprint import (ActiveMap, ImprintDescriptorSet, VectorStore, aggregate,
                      build_active_map, extract_descriptors, fit_descriptor_pca,
                      fit_video_vector_pca, load_vector_store,
                      postprocess_imprint_descriptors, postprocess_video_vector,
                      save_vector_store, sum_aggregate)
from .rnet import (AttentionTrace, ReasoningNet, RecountingResult, load_rnet,
                   recount, render_recounting, rnet_forward, rnet_init,
                   rnet_loss_and_grads, rnet_predict, rnet_train, save_rnet,
                   sgd_learning_rate, train_linear_classifier)
from .retrieval import (RankedList, aqe_rerank, average_precision, don_rerank,
                        evaluate_map, load_run, rank, save_report, save_run)

__version__ = "0.1.0"
