//! Synthetic multimodal cases with planted interaction structure.
//!
//! Every modality has two carrier dimensions (patch feature columns, nucleus
//! feature columns, text entries `0..2`). Each carrier holds one latent bit
//! encoded as `(2b - 1)(0.5 + 0.5u)`, `u ~ U(0, 1)`:
//!
//! - patches: the latent is added to a random half of the patch rows
//! - nuclei: added to the nuclei of the first of three spatial clusters
//! - text: added directly
//!
//! Carriers that hold no label bit hold an independent decoy bit, so every
//! modality has the same marginal distribution whatever the task. The other
//! dimensions are standard normal, and Gaussian noise of std `noise` is
//! added to every feature.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cellgraph::NucleusRecord;
use crate::error::{invalid, Error, Result};
use crate::moe::{InputDims, Modality};

/// Carrier dimensions per modality.
pub const CARRIERS: usize = 2;
const CLUSTERS: usize = 3;
const REFERENCE_DRAWS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    /// The label is read off latents planted only in this modality.
    Unique(Modality),
    /// The same latents are planted in every modality.
    Redundant,
    /// `label = bit(image) XOR bit(text)`.
    SynergyXor,
    /// `label = 2 * bit(image) + (bit(text) XOR bit(graph))`.
    Mixed,
}

impl SynthKind {
    /// Class count implied by the kind, if fixed.
    pub fn fixed_classes(self) -> Option<usize> {
        match self {
            SynthKind::SynergyXor => Some(2),
            SynthKind::Mixed => Some(4),
            _ => None,
        }
    }

    pub fn default_classes(self) -> usize {
        self.fixed_classes().unwrap_or(4)
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SynthKind::Unique(m) => write!(f, "unique-{}", m.name()),
            SynthKind::Redundant => f.write_str("redundant"),
            SynthKind::SynergyXor => f.write_str("synergy-xor"),
            SynthKind::Mixed => f.write_str("mixed"),
        }
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "unique-img" => SynthKind::Unique(Modality::Image),
            "unique-text" => SynthKind::Unique(Modality::Text),
            "unique-graph" => SynthKind::Unique(Modality::Graph),
            "redundant" => SynthKind::Redundant,
            "synergy-xor" => SynthKind::SynergyXor,
            "mixed" => SynthKind::Mixed,
            _ => return Err(invalid(format!("unknown dataset kind {s:?}"))),
        })
    }
}

impl Serialize for SynthKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for SynthKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub n_samples: usize,
    pub classes: usize,
    pub noise: f64,
    pub patches: usize,
    pub nuclei: usize,
    pub dims: InputDims,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(kind: SynthKind, n_samples: usize, noise: f64, seed: u64) -> Self {
        Self {
            kind,
            n_samples,
            classes: kind.default_classes(),
            noise,
            patches: 16,
            nuclei: 24,
            dims: InputDims::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.kind.fixed_classes() {
            if self.classes != c {
                return Err(invalid(format!("{} needs {c} classes, got {}", self.kind, self.classes)));
            }
        } else if self.classes != 2 && self.classes != 4 {
            return Err(invalid(format!("{} supports 2 or 4 classes, got {}", self.kind, self.classes)));
        }
        if self.n_samples < 10 * self.classes {
            return Err(invalid(format!(
                "need at least {} samples for {} classes, got {}",
                10 * self.classes,
                self.classes,
                self.n_samples
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(invalid(format!("noise std must be finite and >= 0, got {}", self.noise)));
        }
        if self.patches < 2 || self.nuclei < CLUSTERS {
            return Err(invalid(format!("need >= 2 patches and >= {CLUSTERS} nuclei per case")));
        }
        let d = self.dims;
        if d.patch < CARRIERS || d.text < CARRIERS || d.node < CARRIERS {
            return Err(invalid(format!("every modality needs at least {CARRIERS} feature dims")));
        }
        Ok(())
    }

    /// Number of label bits.
    fn bits(&self) -> usize {
        match self.kind {
            SynthKind::SynergyXor => 2,
            SynthKind::Mixed => 3,
            _ => self.classes.trailing_zeros() as usize,
        }
    }

    /// Label bit held by each `(modality, carrier)`, `None` for a decoy.
    fn placement(&self, m: Modality, carrier: usize) -> Option<usize> {
        match self.kind {
            SynthKind::Unique(u) => (m == u && carrier < self.bits()).then_some(carrier),
            SynthKind::Redundant => (carrier < self.bits()).then_some(carrier),
            SynthKind::SynergyXor => match (m, carrier) {
                (Modality::Image, 0) => Some(0),
                (Modality::Text, 0) => Some(1),
                _ => None,
            },
            SynthKind::Mixed => match (m, carrier) {
                (Modality::Image, 0) => Some(0),
                (Modality::Text, 0) => Some(1),
                (Modality::Graph, 0) => Some(2),
                _ => None,
            },
        }
    }

    fn label(&self, bits: &[bool]) -> usize {
        let b = |i: usize| bits[i] as usize;
        match self.kind {
            SynthKind::SynergyXor => b(0) ^ b(1),
            SynthKind::Mixed => 2 * b(0) + (b(1) ^ b(2)),
            _ => (0..self.bits()).map(|i| b(i) << i).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalSample {
    pub patient_id: String,
    pub label: usize,
    /// `N x d0` patch features, one row per patch.
    pub patches: Vec<Vec<f64>>,
    pub nuclei: Vec<NucleusRecord>,
    pub text: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SampleLine {
    patient_id: String,
    label: usize,
    patches: Vec<Vec<f64>>,
    /// `[id, x, y, f1 .. fD]`
    nuclei: Vec<Vec<f64>>,
    text: Vec<f64>,
}

impl From<&MultimodalSample> for SampleLine {
    fn from(s: &MultimodalSample) -> Self {
        Self {
            patient_id: s.patient_id.clone(),
            label: s.label,
            patches: s.patches.clone(),
            nuclei: s
                .nuclei
                .iter()
                .map(|n| [n.id as f64, n.coord.0, n.coord.1].into_iter().chain(n.features.iter().copied()).collect())
                .collect(),
            text: s.text.clone(),
        }
    }
}

impl SampleLine {
    fn into_sample(self, line: usize) -> Result<MultimodalSample> {
        let nuclei = self
            .nuclei
            .into_iter()
            .map(|row| {
                if row.len() < 3 || row[0] < 0.0 || row[0].fract() != 0.0 {
                    return Err(Error::Parse { line, message: "nucleus rows are [id, x, y, features...]".into() });
                }
                Ok(NucleusRecord { id: row[0] as usize, coord: (row[1], row[2]), features: row[3..].to_vec() })
            })
            .collect::<Result<_>>()?;
        Ok(MultimodalSample {
            patient_id: self.patient_id,
            label: self.label,
            patches: self.patches,
            nuclei,
            text: self.text,
        })
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(seed) ^ index))
}

fn latent(rng: &mut ChaCha8Rng, bit: bool) -> f64 {
    let sign = if bit { 1.0 } else { -1.0 };
    sign * (0.5 + 0.5 * rng.random::<f64>())
}

fn draw_sample(spec: &SynthSpec, index: usize) -> MultimodalSample {
    let mut rng = sample_rng(spec.seed, index as u64);
    let bits: Vec<bool> = (0..spec.bits()).map(|_| rng.random()).collect();
    // one latent value per label bit, shared by every modality carrying it
    let shared: Vec<f64> = bits.iter().map(|&b| latent(&mut rng, b)).collect();
    let carriers = |rng: &mut ChaCha8Rng, m: Modality| -> [f64; CARRIERS] {
        let mut out = [0.0; CARRIERS];
        for (c, o) in out.iter_mut().enumerate() {
            *o = match spec.placement(m, c) {
                Some(b) => shared[b],
                None => {
                    let decoy = rng.random();
                    latent(rng, decoy)
                }
            };
        }
        out
    };
    let noise = Normal::new(0.0, spec.noise).expect("validated noise std");
    let feature = |rng: &mut ChaCha8Rng, dim: usize, plant: Option<&[f64; CARRIERS]>| -> Vec<f64> {
        (0..dim)
            .map(|j| {
                let base = if j < CARRIERS {
                    plant.map_or(0.0, |p| p[j])
                } else {
                    StandardNormal.sample(rng)
                };
                base + noise.sample(rng)
            })
            .collect()
    };
    let d = spec.dims;

    let img = carriers(&mut rng, Modality::Image);
    let mut rows: Vec<usize> = (0..spec.patches).collect();
    for i in (1..rows.len()).rev() {
        rows.swap(i, rng.random_range(0..=i));
    }
    let mut marked = vec![false; spec.patches];
    for &r in &rows[..spec.patches / 2] {
        marked[r] = true;
    }
    let patches = marked.iter().map(|&on| feature(&mut rng, d.patch, on.then_some(&img))).collect();

    let txt = carriers(&mut rng, Modality::Text);
    let text = feature(&mut rng, d.text, Some(&txt));

    let gr = carriers(&mut rng, Modality::Graph);
    let centers: Vec<(f64, f64)> =
        (0..CLUSTERS).map(|_| (rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0))).collect();
    let spread = Normal::new(0.0, 40.0).expect("cluster spread");
    let nuclei = (0..spec.nuclei)
        .map(|id| {
            let c = id % CLUSTERS;
            let coord = (centers[c].0 + spread.sample(&mut rng), centers[c].1 + spread.sample(&mut rng));
            let features = feature(&mut rng, d.node, (c == 0).then_some(&gr));
            NucleusRecord { id, coord, features }
        })
        .collect();

    MultimodalSample { patient_id: format!("P{index:05}"), label: spec.label(&bits), patches, nuclei, text }
}

/// Draws the dataset; a pure function of `spec`.
pub fn generate(spec: &SynthSpec) -> Result<Vec<MultimodalSample>> {
    spec.validate()?;
    Ok((0..spec.n_samples).map(|i| draw_sample(spec, i)).collect())
}

/// Per-modality summary the oracle and the probes read: column means of
/// patches, column means of nucleus features, or the text vector.
pub fn modality_summary(sample: &MultimodalSample, m: Modality) -> Vec<f64> {
    let col_means = |rows: Vec<&[f64]>| -> Vec<f64> {
        let n = rows.len() as f64;
        let mut out = vec![0.0; rows.first().map_or(0, |r| r.len())];
        for r in rows {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v / n;
            }
        }
        out
    };
    match m {
        Modality::Image => col_means(sample.patches.iter().map(Vec::as_slice).collect()),
        Modality::Graph => col_means(sample.nuclei.iter().map(|n| n.features.as_slice()).collect()),
        Modality::Text => sample.text.clone(),
    }
}

/// Planting-aware decision rule restricted to the `observed` modalities:
/// each label bit is read as the sign of one observed carrier; bits with no
/// observed carrier are guessed as 0.
pub fn oracle_predict(spec: &SynthSpec, sample: &MultimodalSample, observed: &[Modality]) -> usize {
    let mut bits = vec![false; spec.bits()];
    let mut seen = vec![false; spec.bits()];
    for &m in observed {
        let summary = modality_summary(sample, m);
        for (c, &v) in summary.iter().enumerate().take(CARRIERS) {
            if let Some(b) = spec.placement(m, c) {
                if !seen[b] {
                    bits[b] = v > 0.0;
                    seen[b] = true;
                }
            }
        }
    }
    spec.label(&bits)
}

/// Accuracy of [`oracle_predict`] on a fresh draw of 10,000 cases.
pub fn oracle_accuracy(spec: &SynthSpec, observed: &[Modality]) -> Result<f64> {
    spec.validate()?;
    let fresh = SynthSpec { seed: splitmix(spec.seed ^ 0x5EED_0F_BA7E5), ..spec.clone() };
    let hits = (0..REFERENCE_DRAWS)
        .filter(|&i| {
            let s = draw_sample(&fresh, i);
            oracle_predict(&fresh, &s, observed) == s.label
        })
        .count();
    Ok(hits as f64 / REFERENCE_DRAWS as f64)
}

/// Accuracy of the oracle that sees every modality.
pub fn bayes_reference(spec: &SynthSpec) -> Result<f64> {
    oracle_accuracy(spec, &Modality::ALL)
}

/// Multinomial logistic regression fitted by full-batch gradient descent on
/// standardised features.
#[derive(Debug, Clone)]
pub struct LinearProbe {
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `classes x (dim + 1)`, bias last.
    weights: Vec<Vec<f64>>,
}

impl LinearProbe {
    pub fn fit(x: &[Vec<f64>], y: &[usize], classes: usize, iters: usize, lr: f64) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(invalid("probe needs matching, non-empty features and labels"));
        }
        let dim = x[0].len();
        let n = x.len() as f64;
        let mut mean = vec![0.0; dim];
        for row in x {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut scale = vec![0.0; dim];
        for row in x {
            for ((s, v), m) in scale.iter_mut().zip(row).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        for s in &mut scale {
            *s = if *s > 0.0 { 1.0 / s.sqrt() } else { 1.0 };
        }
        let mut probe = Self { mean, scale, weights: vec![vec![0.0; dim + 1]; classes] };
        let z: Vec<Vec<f64>> = x.iter().map(|r| probe.standardise(r)).collect();
        for _ in 0..iters {
            let mut grad = vec![vec![0.0; dim + 1]; classes];
            for (zi, &yi) in z.iter().zip(y) {
                let p = probe.probabilities_std(zi);
                for (c, gc) in grad.iter_mut().enumerate() {
                    let e = p[c] - if c == yi { 1.0 } else { 0.0 };
                    for (g, v) in gc.iter_mut().zip(zi.iter().chain([&1.0])) {
                        *g += e * v / n;
                    }
                }
            }
            for (w, g) in probe.weights.iter_mut().zip(&grad) {
                for (wi, gi) in w.iter_mut().zip(g) {
                    *wi -= lr * gi;
                }
            }
        }
        Ok(probe)
    }

    fn standardise(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) * s).collect()
    }

    fn probabilities_std(&self, z: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = self
            .weights
            .iter()
            .map(|w| w[..z.len()].iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + w[z.len()])
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        crate::moe::argmax(&self.probabilities_std(&self.standardise(x)))
    }

    pub fn accuracy(&self, x: &[Vec<f64>], y: &[usize]) -> f64 {
        let hits = x.iter().zip(y).filter(|(xi, &yi)| self.predict(xi) == yi).count();
        hits as f64 / x.len() as f64
    }
}

/// Held-out accuracy of a linear probe on the summaries of `modalities`,
/// fitted on the first 70% of `samples`.
pub fn probe_accuracy(samples: &[MultimodalSample], modalities: &[Modality], classes: usize) -> Result<f64> {
    let x: Vec<Vec<f64>> =
        samples.iter().map(|s| modalities.iter().flat_map(|&m| modality_summary(s, m)).collect()).collect();
    let y: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let cut = samples.len() * 7 / 10;
    if cut == 0 || cut == samples.len() {
        return Err(invalid("probe needs at least 2 samples"));
    }
    let probe = LinearProbe::fit(&x[..cut], &y[..cut], classes, 300, 0.5)?;
    Ok(probe.accuracy(&x[cut..], &y[cut..]))
}

/// Sidecar written next to a dataset file as `<file>.manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: SynthSpec,
    pub samples: usize,
    pub classes: usize,
    pub dims: InputDims,
    pub layout: String,
}

pub fn manifest_path(data: &Path) -> std::path::PathBuf {
    let mut s = data.as_os_str().to_owned();
    s.push(".manifest.json");
    s.into()
}

pub fn write_samples<W: Write>(mut out: W, samples: &[MultimodalSample]) -> Result<()> {
    for s in samples {
        serde_json::to_writer(&mut out, &SampleLine::from(s))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_samples<R: BufRead>(input: R) -> Result<Vec<MultimodalSample>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleLine =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        out.push(rec.into_sample(i + 1)?);
    }
    Ok(out)
}

/// Writes the JSON-lines dataset and its manifest.
pub fn save_dataset(path: &Path, spec: &SynthSpec, samples: &[MultimodalSample]) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_samples(file, samples)?;
    let manifest = DatasetManifest {
        spec: spec.clone(),
        samples: samples.len(),
        classes: spec.classes,
        dims: spec.dims,
        layout: "one JSON object per line: patient_id, label, patches [[f..]], nuclei [[id,x,y,f..]], text [f..]"
            .into(),
    };
    std::fs::write(manifest_path(path), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

/// Reads a dataset file and, when present, its manifest.
pub fn load_dataset(path: &Path) -> Result<(Vec<MultimodalSample>, Option<DatasetManifest>)> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let samples = read_samples(file)?;
    let mp = manifest_path(path);
    let manifest = if mp.exists() { Some(serde_json::from_str(&std::fs::read_to_string(mp)?)?) } else { None };
    Ok((samples, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: SynthKind, n: usize, noise: f64) -> SynthSpec {
        SynthSpec::new(kind, n, noise, 17)
    }

    #[test]
    fn kind_names_round_trip() {
        for s in ["unique-img", "unique-text", "unique-graph", "redundant", "synergy-xor", "mixed"] {
            assert_eq!(s.parse::<SynthKind>().unwrap().to_string(), s);
        }
        assert!("unique-audio".parse::<SynthKind>().is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(spec(SynthKind::Redundant, 39, 0.1).validate().is_err());
        assert!(spec(SynthKind::Redundant, 40, 0.1).validate().is_ok());
        assert!(spec(SynthKind::Redundant, 40, -0.1).validate().is_err());
        let mut s = spec(SynthKind::SynergyXor, 100, 0.0);
        s.classes = 4;
        assert!(s.validate().is_err());
        let mut s = spec(SynthKind::Unique(Modality::Text), 100, 0.0);
        s.classes = 3;
        assert!(generate(&s).is_err());
    }

    #[test]
    fn shapes_and_ids() {
        let s = spec(SynthKind::Mixed, 50, 0.1);
        let data = generate(&s).unwrap();
        let mut ids: Vec<_> = data.iter().map(|x| x.patient_id.clone()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 50);
        for x in &data {
            assert_eq!(x.patches.len(), 16);
            assert!(x.patches.iter().all(|r| r.len() == 32));
            assert_eq!(x.nuclei.len(), 24);
            assert!(x.nuclei.iter().enumerate().all(|(i, n)| n.id == i && n.features.len() == 16));
            assert_eq!(x.text.len(), 32);
            assert!(x.label < 4);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let s = spec(SynthKind::Redundant, 60, 0.3);
        let a = generate(&s).unwrap();
        let b = generate(&s).unwrap();
        let mut abuf = Vec::new();
        let mut bbuf = Vec::new();
        write_samples(&mut abuf, &a).unwrap();
        write_samples(&mut bbuf, &b).unwrap();
        assert_eq!(abuf, bbuf);
        let c = generate(&SynthSpec { seed: 18, ..s }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn labels_are_balanced() {
        for kind in [SynthKind::Unique(Modality::Image), SynthKind::Redundant, SynthKind::SynergyXor, SynthKind::Mixed] {
            let s = spec(kind, 2000, 0.1);
            let data = generate(&s).unwrap();
            let mut counts = vec![0usize; s.classes];
            for x in &data {
                counts[x.label] += 1;
            }
            for c in counts {
                let freq = c as f64 / 2000.0;
                assert!((freq - 1.0 / s.classes as f64).abs() < 0.05, "{kind}: {freq}");
            }
        }
    }

    #[test]
    fn xor_needs_both_planted_bits() {
        let s = spec(SynthKind::SynergyXor, 100, 0.0);
        assert_eq!(bayes_reference(&s).unwrap(), 1.0);
        for m in Modality::ALL {
            let acc = oracle_accuracy(&s, &[m]).unwrap();
            assert!((acc - 0.5).abs() <= 0.02, "{m:?}: {acc}");
        }
        assert_eq!(oracle_accuracy(&s, &[Modality::Image, Modality::Text]).unwrap(), 1.0);
    }

    #[test]
    fn unique_text_is_recoverable_from_text_alone() {
        let s = spec(SynthKind::Unique(Modality::Text), 200, 0.0);
        for x in generate(&s).unwrap() {
            assert_eq!(oracle_predict(&s, &x, &[Modality::Text]), x.label);
        }
    }

    #[test]
    fn pinned_reference_accuracies() {
        // Monte-Carlo values from the first run with these seeds.
        let cases = [
            (SynthKind::Unique(Modality::Image), 0.1, None, 1.0),
            (SynthKind::Unique(Modality::Graph), 0.1, None, 1.0),
            (SynthKind::Unique(Modality::Text), 0.1, None, 1.0),
            (SynthKind::Unique(Modality::Text), 0.3, None, 0.9772),
            (SynthKind::SynergyXor, 0.1, Some(Modality::Image), 0.4911),
            (SynthKind::Mixed, 0.1, Some(Modality::Image), 0.4915),
        ];
        for (kind, noise, only, expect) in cases {
            let s = spec(kind, 100, noise);
            let acc = match only {
                Some(m) => oracle_accuracy(&s, &[m]).unwrap(),
                None => bayes_reference(&s).unwrap(),
            };
            assert_eq!(acc, expect, "{kind} noise={noise} only={only:?}");
        }
    }

    #[test]
    fn unique_modality_is_isolated() {
        for m in Modality::ALL {
            let s = spec(SynthKind::Unique(m), 1000, 0.0);
            let data = generate(&s).unwrap();
            for other in Modality::ALL {
                let acc = probe_accuracy(&data, &[other], s.classes).unwrap();
                if other == m {
                    assert!(acc >= 0.95, "{m:?} on itself: {acc}");
                } else {
                    assert!(acc <= 0.55, "{m:?} probed on {other:?}: {acc}");
                }
            }
        }
    }

    #[test]
    fn xor_is_not_linearly_separable() {
        let s = spec(SynthKind::SynergyXor, 1000, 0.0);
        let data = generate(&s).unwrap();
        let acc = probe_accuracy(&data, &[Modality::Image, Modality::Text], 2).unwrap();
        assert!(acc <= 0.6, "{acc}");
    }

    #[test]
    fn dataset_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let s = spec(SynthKind::Mixed, 40, 0.2);
        let data = generate(&s).unwrap();
        save_dataset(&path, &s, &data).unwrap();
        let (back, manifest) = load_dataset(&path).unwrap();
        assert_eq!(back, data);
        let manifest = manifest.unwrap();
        assert_eq!(manifest.spec, s);
        assert_eq!(manifest.samples, 40);
    }

    #[test]
    fn bad_lines_report_position() {
        let text = "{\"patient_id\":\"a\",\"label\":0,\"patches\":[],\"nuclei\":[],\"text\":[]}\nnot json\n";
        match read_samples(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
