//! Synthetic clean/noisy/enhanced corpus construction and the manifest CSV format.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::StftConfig;
use crate::signal::{
    decode_wav, encode_wav, mix_at_snr_offset, proxy_quality, spectral_subtract, synth_noise, synth_speechlike, write_wav,
    AudioClip, NoiseKind, Q_MAX, Q_MIN,
};
use crate::util::{mix_seed, rng_from, write_atomic};

pub const MANIFEST_HEADER: [&str; 6] = [
    "utterance_id",
    "condition",
    "audio_path",
    "noise_kind",
    "snr_db",
    "label_q",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Condition {
    Clean,
    Noisy,
    Enhanced,
}

impl Condition {
    pub fn as_str(&self) -> &'static str {
        match self {
            Condition::Clean => "clean",
            Condition::Noisy => "noisy",
            Condition::Enhanced => "enhanced",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(Condition::Clean),
            "noisy" => Ok(Condition::Noisy),
            "enhanced" => Ok(Condition::Enhanced),
            other => Err(Error::Manifest(format!("unknown condition {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub utterance_id: String,
    pub condition: Condition,
    /// As written in the CSV; relative paths resolve against the manifest's directory.
    pub audio_path: PathBuf,
    /// Empty for clean entries. Free-form for externally supplied manifests.
    pub noise_kind: String,
    pub snr_db: Option<f64>,
    pub label_q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub split: Split,
    pub entries: Vec<ManifestEntry>,
    /// Directory that relative `audio_path`s resolve against.
    pub base_dir: PathBuf,
}

impl CorpusManifest {
    pub fn new(split: Split, entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let m = CorpusManifest {
            split,
            entries,
            base_dir: base_dir.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.utterance_id.as_str()) {
                return Err(Error::Manifest(format!(
                    "duplicate utterance_id {:?}",
                    e.utterance_id
                )));
            }
            if !(Q_MIN..=Q_MAX).contains(&e.label_q) {
                return Err(Error::Manifest(format!(
                    "{}: label_q {} outside [{Q_MIN}, {Q_MAX}]",
                    e.utterance_id, e.label_q
                )));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.audio_path.is_absolute() {
            entry.audio_path.clone()
        } else {
            self.base_dir.join(&entry.audio_path)
        }
    }

    /// Manifest CSV image, rows in stored order.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(MANIFEST_HEADER)?;
        for e in &self.entries {
            let snr = e.snr_db.map(|s| s.to_string()).unwrap_or_default();
            let label = format!("{:.4}", e.label_q);
            let path = e.audio_path.to_string_lossy();
            w.write_record([
                e.utterance_id.as_str(),
                e.condition.as_str(),
                path.as_ref(),
                e.noise_kind.as_str(),
                snr.as_str(),
                label.as_str(),
            ])?;
        }
        w.into_inner()
            .map_err(|e| Error::Manifest(format!("flushing csv: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_csv()?)
    }

    pub fn from_csv(bytes: &[u8], split: Split, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut r = csv::Reader::from_reader(bytes);
        let header = r.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
            return Err(Error::Manifest(format!(
                "unexpected header {:?}, want {}",
                header.iter().collect::<Vec<_>>(),
                MANIFEST_HEADER.join(",")
            )));
        }
        let mut entries = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or("").trim();
            let bad = |what: &str| Error::Manifest(format!("row {}: bad {what}", row + 1));
            let snr_db = match field(4) {
                "" => None,
                s => Some(s.parse::<f64>().map_err(|_| bad("snr_db"))?),
            };
            let label_q = field(5).parse::<f64>().map_err(|_| bad("label_q"))?;
            entries.push(ManifestEntry {
                utterance_id: field(0).to_string(),
                condition: field(1).parse()?,
                audio_path: PathBuf::from(field(2)),
                noise_kind: field(3).to_string(),
                snr_db,
                label_q,
            });
        }
        CorpusManifest::new(split, entries, base_dir)
    }

    pub fn load(path: &Path, split: Split) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let base = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        CorpusManifest::from_csv(&bytes, split, base)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub snr_levels_db: Vec<f64>,
    pub noise_kinds: Vec<NoiseKind>,
    pub duration_s: (f64, f64),
    pub master_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train: 500,
            n_val: 100,
            n_test: 100,
            snr_levels_db: vec![-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0],
            noise_kinds: NoiseKind::ALL.to_vec(),
            duration_s: (1.5, 3.0),
            master_seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(Error::InvalidConfig("split counts must be at least 1".into()));
        }
        if self.snr_levels_db.is_empty() || self.snr_levels_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig("snr levels must be finite and nonempty".into()));
        }
        if self.noise_kinds.is_empty() {
            return Err(Error::InvalidConfig("no noise kinds".into()));
        }
        let (lo, hi) = self.duration_s;
        if !(1.0 <= lo && lo <= hi && hi <= 5.0) {
            return Err(Error::InvalidConfig(format!("duration range {lo}..{hi} outside [1, 5]")));
        }
        Ok(())
    }

    fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Val => self.n_val,
            Split::Test => self.n_test,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub train: CorpusManifest,
    pub val: CorpusManifest,
    pub test: CorpusManifest,
}

impl Corpus {
    pub fn manifest_path(dir: &Path, split: Split) -> PathBuf {
        dir.join(format!("{split}.csv"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Corpus {
            train: CorpusManifest::load(&Self::manifest_path(dir, Split::Train), Split::Train)?,
            val: CorpusManifest::load(&Self::manifest_path(dir, Split::Val), Split::Val)?,
            test: CorpusManifest::load(&Self::manifest_path(dir, Split::Test), Split::Test)?,
        })
    }

    pub fn split(&self, split: Split) -> &CorpusManifest {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Counts of (clean, noisy, enhanced) for a split of `n` utterances.
pub(crate) fn condition_counts(n: usize) -> (usize, usize, usize) {
    let clean = ((n as f64) * 0.05).round() as usize;
    let rest = n - clean.min(n);
    let noisy = rest.div_ceil(2);
    (clean.min(n), noisy, rest - noisy)
}

fn degrade(
    clean: &AudioClip,
    cfg: &SynthConfig,
    seed: u64,
) -> Result<(AudioClip, NoiseKind, f64)> {
    let mut rng = rng_from(seed, 0xde9);
    let kind = cfg.noise_kinds[rng.random_range(0..cfg.noise_kinds.len())];
    let snr = cfg.snr_levels_db[rng.random_range(0..cfg.snr_levels_db.len())];
    let noise = synth_noise(kind, mix_seed(seed, 0x4015e), clean.duration_s() + 1.0)?;
    let offset = rng.random_range(0..noise.len());
    Ok((mix_at_snr_offset(clean, &noise, snr, offset)?, kind, snr))
}

fn stored_form(clip: &AudioClip) -> Result<AudioClip> {
    decode_wav(&encode_wav(clip).0)
}

fn synth_entry(
    cfg: &SynthConfig,
    split: Split,
    index: usize,
    condition: Condition,
    out_dir: &Path,
) -> Result<ManifestEntry> {
    let seed = mix_seed(cfg.master_seed, ((split as u64) << 32) | index as u64);
    let mut rng = rng_from(seed, 0xd0);
    let (lo, hi) = cfg.duration_s;
    let duration = lo + (hi - lo) * rng.random::<f64>();
    let clean = synth_speechlike(mix_seed(seed, 1), duration)?;
    let (audio, noise_kind, snr_db) = match condition {
        Condition::Clean => (clean.clone(), String::new(), None),
        Condition::Noisy => {
            let (mixed, kind, snr) = degrade(&clean, cfg, mix_seed(seed, 2))?;
            (mixed, kind.to_string(), Some(snr))
        }
        Condition::Enhanced => {
            let (mixed, kind, snr) = degrade(&clean, cfg, mix_seed(seed, 3))?;
            let enhanced = spectral_subtract(&mixed, &StftConfig::default())?;
            (enhanced, kind.to_string(), Some(snr))
        }
    };
    // label what is actually stored: PCM16 quantization clamps loud low-SNR mixes
    let audio = stored_form(&audio)?;
    let label_q = proxy_quality(&stored_form(&clean)?, &audio)?;
    let utterance_id = format!("{split}_{index:05}");
    let rel = PathBuf::from("wav").join(split.as_str()).join(format!("{utterance_id}.wav"));
    write_wav(&audio, &out_dir.join(&rel))?;
    Ok(ManifestEntry {
        utterance_id,
        condition,
        audio_path: rel,
        noise_kind,
        snr_db,
        label_q,
    })
}

fn build_split(cfg: &SynthConfig, split: Split, out_dir: &Path) -> Result<CorpusManifest> {
    let n = cfg.count(split);
    let (clean, noisy, enhanced) = condition_counts(n);
    let mut conditions: Vec<Condition> = std::iter::repeat_n(Condition::Clean, clean)
        .chain(std::iter::repeat_n(Condition::Noisy, noisy))
        .chain(std::iter::repeat_n(Condition::Enhanced, enhanced))
        .collect();
    conditions.shuffle(&mut rng_from(cfg.master_seed, 0xc0 + split as u64));
    let entries = conditions
        .into_par_iter()
        .enumerate()
        .map(|(i, c)| synth_entry(cfg, split, i, c, out_dir))
        .collect::<Result<Vec<_>>>()?;
    let manifest = CorpusManifest::new(split, entries, out_dir)?;
    manifest.save(&Corpus::manifest_path(out_dir, split))?;
    Ok(manifest)
}

/// Synthesizes all three splits under `out_dir` and writes `{train,val,test}.csv`.
///
/// Every entry is labelled by [`proxy_quality`] against its clean source.
/// Output is a pure function of `cfg`.
pub fn build_corpus(cfg: &SynthConfig, out_dir: &Path) -> Result<Corpus> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    Ok(Corpus {
        train: build_split(cfg, Split::Train, out_dir)?,
        val: build_split(cfg, Split::Val, out_dir)?,
        test: build_split(cfg, Split::Test, out_dir)?,
    })
}
