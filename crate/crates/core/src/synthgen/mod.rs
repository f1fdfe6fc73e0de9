//! Synthetic ground truth: waveforms, calibrated page renders, per-site
//! perturbations and paired datasets.

mod dataset;
mod profile;
mod render;
mod waveform;

pub use dataset::{
    build_dataset, build_in_memory, load_dataset, plan_dataset, prepare_out_dir, render_record, ClientPages,
    DatasetSpec, Manifest, PageSet, RecordEntry, RecordFiles, Split, StoredPage, MANIFEST_VERSION,
};
pub use profile::{apply_draw, apply_profile, ClientProfile, OverlayKind, PerturbationDraw, DESK_COUNTS, OVERLAY_PROB};
pub use render::{
    layout_position, panel_polyline, pulse_polyline, render_page, CalibrationMeta, PageSample, PanelBox, PulseBox,
    RenderSpec, LAYOUT,
};
pub use waveform::{
    beat_onsets, import_csv_signal, lead_index, parse_csv_signal, synth_waveforms, LeadSignalSet, LEAD_NAMES,
    RECORD_SECONDS,
};
