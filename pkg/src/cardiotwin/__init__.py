"""cardiotwin: forward simulation of infarcted-heart QRS-T electrophysiology.

Pipeline stages: idealized biventricular mesh generation and annotation,
stochastic scar/border-zone synthesis, anisotropic Eikonal activation,
reaction-kinetics voltage recovery, pseudo-ECG lead derivation, ML-ready
cohort export, and DTW/phenotype sensitivity analysis.
"""

__version__ = "0.1.0"

from .activation import (ActivationMap, ConductionParams, RootSet,
                         build_velocity_tensor, default_root_set, solve_eikonal)
from .aha import aha_segment, lv_segment_field
from .analysis import (DtwMatrix, PhenotypeFeatures, dtw, dtw_matrix,
                       extract_features, zscores)
from .cohort import (AnnotatedMesh, CohortSample, PipelineConfig, annotate_mesh,
                     generate_cohort, healthy_replicate_record, run_scenario,
                     subsample_nodes, validate_cohort)
from .ecg import (EcgRecord, derive_leads, electrode_potentials,
                  normalize_and_resample, simulate_ecg)
from .geometry import (BiventricleParams, ElectrodeSet, FiberField, Mesh,
                       VentricularCoords, assign_fibers,
                       compute_ventricular_coordinates,
                       generate_idealized_biventricle, generate_slab,
                       helix_angle, place_electrodes)
from .infarct import (ScarParams, Scenario, TissueMap, correlated_noise_field,
                      grow_border_zone, scenario_by_name, scenario_catalog,
                      synthesize_scar)
from .reaction import (ApdCalibration, ApdParams, ReactionParams, VoltageTraces,
                       apd_field, calibrate_ms_for_apd, measure_apd90,
                       simulate_transmembrane)
