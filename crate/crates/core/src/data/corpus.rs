use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::data::noise::{degrade, NoiseSpec};
use crate::data::phantom::{make_phantom, PhantomSpec};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::tensor::{write_atomic, Tensor};

pub const MANIFEST_NAME: &str = "manifest.tsv";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One manifest line. Paths are relative to the manifest's directory; an
/// entry belongs to the test split when its LDCT file sits in a directory
/// named `test`.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub index: usize,
    pub ldct: PathBuf,
    pub fdct: PathBuf,
    pub seed: u64,
}

impl ManifestEntry {
    pub fn split(&self) -> Split {
        let parent = self.ldct.parent().and_then(|p| p.file_name());
        if parent.is_some_and(|n| n == "test") {
            Split::Test
        } else {
            Split::Train
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}\t{}\t{}\t{}\n", e.index, e.ldct.display(), e.fdct.display(), e.seed))
            .collect()
    }

    /// Parses `index<TAB>ldct<TAB>fdct<TAB>seed` lines; blank lines and `#`
    /// comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let bad = |what: &str| Error::Format(format!("manifest line {}: {what}", lineno + 1));
            if cols.len() != 4 {
                return Err(bad(&format!("expected 4 tab-separated fields, found {}", cols.len())));
            }
            entries.push(ManifestEntry {
                index: cols[0].parse().map_err(|_| bad("index is not an integer"))?,
                ldct: PathBuf::from(cols[1]),
                fdct: PathBuf::from(cols[2]),
                seed: cols[3].parse().map_err(|_| bad("seed is not an integer"))?,
            });
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// An LDCT/FDCT pair, each `[1, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub index: usize,
    pub ldct: Tensor<f32>,
    pub fdct: Tensor<f32>,
    pub seed: u64,
    /// Where the pair came from, e.g. the LDCT file path.
    pub provenance: String,
}

impl ImagePair {
    pub fn new(index: usize, ldct: Tensor<f32>, fdct: Tensor<f32>, seed: u64, provenance: String) -> Result<Self> {
        if ldct.dims() != fdct.dims() {
            return Err(Error::shape(
                "image_pair",
                format!("{provenance}: LDCT {:?} vs FDCT {:?}", ldct.dims(), fdct.dims()),
            ));
        }
        match *ldct.dims() {
            [1, _, _] => {}
            ref d => return Err(Error::shape("image_pair", format!("{provenance}: expected 1,H,W, got {d:?}"))),
        }
        if !ldct.is_finite() || !fdct.is_finite() {
            return Err(Error::Numeric(format!("{provenance}: non-finite pixel values")));
        }
        Ok(Self {
            index,
            ldct,
            fdct,
            seed,
            provenance,
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub train: Vec<ImagePair>,
    pub test: Vec<ImagePair>,
}

impl Corpus {
    /// Reads every pair listed in a manifest.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = Manifest::load(manifest_path)?;
        let root = manifest_path.parent().unwrap_or(Path::new("."));
        let mut corpus = Corpus::default();
        for e in &manifest.entries {
            let ldct = Tensor::load_wten(root.join(&e.ldct))?;
            let fdct = Tensor::load_wten(root.join(&e.fdct))?;
            let pair = ImagePair::new(e.index, ldct, fdct, e.seed, e.ldct.display().to_string())?;
            match e.split() {
                Split::Train => corpus.train.push(pair),
                Split::Test => corpus.test.push(pair),
            }
        }
        Ok(corpus)
    }
}

/// Per-image seed; train indices come first, so train and test seeds never
/// share an index.
pub fn image_seed(base: u64, index: usize) -> u64 {
    derive_seed(base, index as u64)
}

/// Generates `n_train + n_test` pairs under `out_dir/{train,test}/` and
/// writes `out_dir/manifest.tsv` last.
pub fn build_corpus(
    n_train: usize,
    n_test: usize,
    phantom: &PhantomSpec,
    noise: &NoiseSpec,
    out_dir: &Path,
) -> Result<Manifest> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::Usage(format!(
            "corpus needs at least one train and one test pair (got {n_train} and {n_test})"
        )));
    }
    phantom.validate()?;
    noise.validate()?;
    for split in [Split::Train, Split::Test] {
        let dir = out_dir.join(split.dir());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let entries: Vec<ManifestEntry> = (0..n_train + n_test)
        .into_par_iter()
        .map(|index| {
            let split = if index < n_train { Split::Train } else { Split::Test };
            let seed = image_seed(phantom.seed, index);
            let clean = make_phantom(&PhantomSpec {
                seed,
                ..phantom.clone()
            })?;
            let noisy = degrade(
                &clean,
                &NoiseSpec {
                    seed: derive_seed(noise.seed, seed),
                    ..noise.clone()
                },
            )?;
            let ldct = PathBuf::from(split.dir()).join(format!("{index:05}_ldct.wten"));
            let fdct = PathBuf::from(split.dir()).join(format!("{index:05}_fdct.wten"));
            noisy.save_wten(out_dir.join(&ldct))?;
            clean.save_wten(out_dir.join(&fdct))?;
            Ok(ManifestEntry { index, ldct, fdct, seed })
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest { entries };
    write_atomic(&out_dir.join(MANIFEST_NAME), manifest.to_text().as_bytes())?;
    Ok(manifest)
}
