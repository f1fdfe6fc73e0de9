//! Paired page / mask / signal datasets split across simulated sites.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::profile::{apply_draw, ClientProfile, PerturbationDraw};
use super::render::{render_page, CalibrationMeta, PageSample, RenderSpec};
use super::waveform::synth_waveforms;
use crate::error::{Error, Result};
use crate::raster::{read_pgm, read_pgm_mask, write_pgm, write_pgm_mask, BinMask, Gray8, GrayImage};
use crate::rng::{derive_seed, sim_rng, uniform};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub seed: u64,
    pub profiles: Vec<ClientProfile>,
    pub render: RenderSpec,
    pub fs: f64,
    pub hr_bpm: (f64, f64),
    pub val_fraction: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            profiles: ClientProfile::builtins(),
            render: RenderSpec::default(),
            fs: 500.0,
            hr_bpm: (50.0, 110.0),
            val_fraction: 0.2,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.profiles.is_empty() {
            return Err(Error::invalid("profiles", "at least one client profile is required"));
        }
        for p in &self.profiles {
            p.validate()?;
            if p.n_pages == 0 {
                return Err(Error::invalid("n_pages", format!("client {} has no pages", p.name)));
            }
        }
        let mut names: Vec<&str> = self.profiles.iter().map(|p| p.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("profiles", "client names must be unique"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::invalid("val_fraction", "must lie in [0, 1)"));
        }
        let (a, b) = self.hr_bpm;
        if !(40.0 <= a && a <= b && b <= 180.0) {
            return Err(Error::invalid("hr_bpm", "range must lie in [40, 180]"));
        }
        self.render.validate()
    }

    pub fn total_pages(&self) -> usize {
        self.profiles.iter().map(|p| p.n_pages).sum()
    }
}

/// Paths are relative to the dataset root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordFiles {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub signal: PathBuf,
    pub meta: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub record_id: String,
    pub client: String,
    pub split: Split,
    pub wave_seed: u64,
    pub hr_bpm: f64,
    pub draw: PerturbationDraw,
    pub files: RecordFiles,
    pub calib: CalibrationMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub spec: DatasetSpec,
    pub records: Vec<RecordEntry>,
}

impl Manifest {
    pub fn records_for<'a>(&'a self, client: &'a str, split: Split) -> impl Iterator<Item = &'a RecordEntry> + 'a {
        self.records
            .iter()
            .filter(move |r| r.client == client && r.split == split)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Format {
            kind: "manifest",
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

/// Decides ids, splits, waveform seeds and perturbation draws without
/// rendering anything.
pub fn plan_dataset(spec: &DatasetSpec) -> Result<Manifest> {
    spec.validate()?;
    let mut records = Vec::with_capacity(spec.total_pages());
    for profile in &spec.profiles {
        let n = profile.n_pages;
        let n_val = (spec.val_fraction * n as f64).round() as usize;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut sim_rng(spec.seed, &format!("split:{}", profile.name), 0));
        let mut is_val = vec![false; n];
        for &i in &order[..n_val] {
            is_val[i] = true;
        }
        for (i, &val) in is_val.iter().enumerate() {
            let record_id = format!("{}-{:05}", profile.name, i);
            let page_seed = derive_seed(spec.seed, &format!("page:{record_id}"), 0);
            let mut rng = sim_rng(page_seed, "page.wave", 0);
            let hr_bpm = uniform(&mut rng, spec.hr_bpm.0, spec.hr_bpm.1);
            let draw = PerturbationDraw::sample(profile, derive_seed(page_seed, "page.draw", 0));
            let split = if val { Split::Val } else { Split::Train };
            let stem = PathBuf::from("data")
                .join(&profile.name)
                .join(split.as_str())
                .join(&record_id);
            let with = |ext: &str| {
                let mut p = stem.clone().into_os_string();
                p.push(ext);
                PathBuf::from(p)
            };
            let calib = spec.render.layout(&record_id).shifted(draw.offset_x, draw.offset_y);
            records.push(RecordEntry {
                record_id: record_id.clone(),
                client: profile.name.clone(),
                split,
                wave_seed: derive_seed(page_seed, "page.wave_seed", 0),
                hr_bpm,
                draw,
                files: RecordFiles {
                    image: with(".pgm"),
                    mask: with(".mask.pgm"),
                    signal: with(".signal.csv"),
                    meta: with(".meta.json"),
                },
                calib,
            });
        }
    }
    Ok(Manifest {
        version: MANIFEST_VERSION,
        spec: spec.clone(),
        records,
    })
}

/// Renders and perturbs one planned record.
pub fn render_record(spec: &DatasetSpec, entry: &RecordEntry) -> Result<PageSample> {
    let signal = synth_waveforms(entry.wave_seed, spec.fs, entry.hr_bpm)?;
    let clean = render_page(&signal, &spec.render, entry.draw.grid_contrast, &entry.record_id)?;
    let mut page = apply_draw(&clean, &entry.draw, spec.render.background);
    page.client = entry.client.clone();
    Ok(page)
}

/// A page as stored: 8-bit image, binary mask, calibration.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredPage {
    pub record_id: String,
    pub client: String,
    pub image: Gray8,
    pub mask: BinMask,
    pub calib: CalibrationMeta,
}

impl StoredPage {
    pub fn from_sample(page: &PageSample) -> Self {
        Self {
            record_id: page.calib.record_id.clone(),
            client: page.client.clone(),
            image: Gray8::from_image(&page.image),
            mask: page.mask.clone(),
            calib: page.calib.clone(),
        }
    }

    pub fn image_f64(&self) -> GrayImage {
        self.image.to_image()
    }
}

#[derive(Clone, Debug, Default)]
pub struct ClientPages {
    pub name: String,
    pub train: Vec<StoredPage>,
    pub val: Vec<StoredPage>,
}

/// All pages grouped per client, in manifest order.
#[derive(Clone, Debug, Default)]
pub struct PageSet {
    pub clients: Vec<ClientPages>,
}

impl PageSet {
    pub fn client(&self, name: &str) -> Option<&ClientPages> {
        self.clients.iter().find(|c| c.name == name)
    }

    fn from_pages(manifest: &Manifest, pages: Vec<StoredPage>) -> Self {
        let mut clients: Vec<ClientPages> = manifest
            .spec
            .profiles
            .iter()
            .map(|p| ClientPages {
                name: p.name.clone(),
                ..Default::default()
            })
            .collect();
        for (entry, page) in manifest.records.iter().zip(pages) {
            let c = clients
                .iter_mut()
                .find(|c| c.name == entry.client)
                .expect("planned client");
            match entry.split {
                Split::Train => c.train.push(page),
                Split::Val => c.val.push(page),
            }
        }
        Self { clients }
    }
}

/// Renders the whole dataset in memory (same bytes as the on-disk build).
pub fn build_in_memory(spec: &DatasetSpec) -> Result<(Manifest, PageSet)> {
    let manifest = plan_dataset(spec)?;
    let pages = manifest
        .records
        .par_iter()
        .map(|e| render_record(spec, e).map(|p| StoredPage::from_sample(&p)))
        .collect::<Result<Vec<_>>>()?;
    let set = PageSet::from_pages(&manifest, pages);
    Ok((manifest, set))
}

/// Fails unless `dir` is absent or empty, or `force` is set.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let nonempty = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_some();
        if nonempty && !force {
            return Err(Error::DirectoryNotEmpty(dir.to_path_buf()));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Renders the dataset to `root` with `manifest.json` at the top.
pub fn build_dataset(spec: &DatasetSpec, root: &Path, force: bool) -> Result<Manifest> {
    prepare_out_dir(root, force)?;
    let manifest = plan_dataset(spec)?;
    manifest.records.par_iter().try_for_each(|e| -> Result<()> {
        let page = render_record(spec, e)?;
        let dir = root.join(e.files.image.parent().expect("nested path"));
        fs::create_dir_all(&dir).map_err(|err| Error::io(&dir, err))?;
        write_pgm(root.join(&e.files.image), &page.image)?;
        write_pgm_mask(root.join(&e.files.mask), &page.mask)?;
        page.signal.write_csv(root.join(&e.files.signal))?;
        page.calib.write_json(root.join(&e.files.meta))
    })?;
    manifest.write(root.join("manifest.json"))?;
    Ok(manifest)
}

/// Loads a dataset written by [`build_dataset`].
pub fn load_dataset(root: &Path) -> Result<(Manifest, PageSet)> {
    let manifest = Manifest::read(root.join("manifest.json"))?;
    let pages = manifest
        .records
        .par_iter()
        .map(|e| -> Result<StoredPage> {
            let image = read_pgm(root.join(&e.files.image))?;
            Ok(StoredPage {
                record_id: e.record_id.clone(),
                client: e.client.clone(),
                image: Gray8::from_image(&image),
                mask: read_pgm_mask(root.join(&e.files.mask))?,
                calib: CalibrationMeta::read_json(root.join(&e.files.meta))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let set = PageSet::from_pages(&manifest, pages);
    Ok((manifest, set))
}
