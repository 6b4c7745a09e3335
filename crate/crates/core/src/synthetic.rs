//! Seeded synthetic multi-omic cohorts with known informative features.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{Omic, OmicsDataset};

/// Generated dataset plus, per omic, the column indices carrying signal.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dataset: OmicsDataset,
    pub informative: Vec<Vec<usize>>,
}

/// How class membership shifts the informative features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Signal {
    /// Mean `shift · class` on every informative feature of every omic.
    Ordinal,
    /// Omic `m` shifts only class `m % C`; other classes look alike.
    OneVsRest,
}

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub patients: usize,
    pub dims: Vec<usize>,
    pub informative: usize,
    pub classes: usize,
    pub shift: f64,
    pub signal: Signal,
    pub seed: u64,
}

impl SyntheticSpec {
    /// 3 omics of 500/300/100 features, 200 patients, 10 informative per omic.
    pub fn planted(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            patients: 200,
            dims: vec![500, 300, 100],
            informative: 10,
            classes: 2,
            shift: 1.5,
            signal: Signal::Ordinal,
            seed,
        }
    }

    /// Three classes, each omic informative about a different class only.
    pub fn complementary(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            patients: 180,
            dims: vec![60, 60, 60],
            informative: 8,
            classes: 3,
            shift: 2.0,
            signal: Signal::OneVsRest,
            seed,
        }
    }
}

pub fn generate(spec: &SyntheticSpec) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels: Vec<usize> = (0..spec.patients).map(|i| i % spec.classes).collect();
    let mut omics = Vec::with_capacity(spec.dims.len());
    let mut informative = Vec::with_capacity(spec.dims.len());
    for (m, &d) in spec.dims.iter().enumerate() {
        let mut cols = sample(&mut rng, d, spec.informative.min(d)).into_vec();
        cols.sort_unstable();
        let mut matrix = Array2::from_shape_fn((spec.patients, d), |_| StandardNormal.sample(&mut rng));
        for &c in &cols {
            for (r, &y) in labels.iter().enumerate() {
                let level = match spec.signal {
                    Signal::Ordinal => y as f64,
                    Signal::OneVsRest => (y == m % spec.classes) as u8 as f64,
                };
                matrix[[r, c]] += spec.shift * level;
            }
        }
        let name = format!("omic{}", m + 1);
        omics.push(Omic { feature_ids: (0..d).map(|j| format!("{name}_f{j:04}")).collect(), name, matrix });
        informative.push(cols);
    }
    Synthetic {
        dataset: OmicsDataset {
            omics,
            labels,
            class_names: (0..spec.classes).map(|c| format!("class{c}")).collect(),
            patient_ids: (0..spec.patients).map(|i| format!("P{i:04}")).collect(),
        },
        informative,
    }
}

/// Two classes; omic 1 holds one strongly separating feature and a few weak
/// ones, the other omics are noise. Returns the dataset and the strong
/// feature's id.
pub fn dominant(seed: u64) -> (OmicsDataset, String) {
    let spec = SyntheticSpec {
        patients: 120,
        dims: vec![40, 30, 20],
        informative: 4,
        classes: 2,
        shift: 0.4,
        signal: Signal::Ordinal,
        seed,
    };
    let mut s = generate(&spec);
    for m in 1..s.dataset.omics.len() {
        // strip the weak signal from the other omics
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (m as u64 + 11));
        for &c in &s.informative[m] {
            for r in 0..spec.patients {
                s.dataset.omics[m].matrix[[r, c]] = StandardNormal.sample(&mut rng);
            }
        }
    }
    let strong = s.informative[0][0];
    for (r, &y) in s.dataset.labels.iter().enumerate() {
        s.dataset.omics[0].matrix[[r, strong]] += 3.0 * y as f64;
    }
    let id = s.dataset.omics[0].feature_ids[strong].clone();
    (s.dataset, id)
}
