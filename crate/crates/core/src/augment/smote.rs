use crate::datasets::SensorWindow;
use crate::{seeded_rng, ClassId, Error, Result};
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::BTreeMap;

/// Per-class size SMOTE oversamples up to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoteTarget {
    /// The size of the largest class.
    MaxClass,
    Count(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TargetRepr {
    Count(usize),
    Name(String),
}

impl Serialize for SmoteTarget {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SmoteTarget::MaxClass => TargetRepr::Name("max-class".into()).serialize(s),
            SmoteTarget::Count(n) => TargetRepr::Count(*n).serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for SmoteTarget {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match TargetRepr::deserialize(d)? {
            TargetRepr::Count(n) => Ok(SmoteTarget::Count(n)),
            TargetRepr::Name(s) if s == "max-class" => Ok(SmoteTarget::MaxClass),
            TargetRepr::Name(s) => Err(serde::de::Error::custom(format!(
                "smote target must be an integer or \"max-class\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoteConfig {
    pub k_neighbors: usize,
    pub target_per_class: SmoteTarget,
    pub seed: u64,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        Self { k_neighbors: 5, target_per_class: SmoteTarget::MaxClass, seed: 0 }
    }
}

/// Provenance of one synthetic sample: `base + delta * (neighbor - base)`,
/// indices into the class's original windows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoteRecord {
    pub class: ClassId,
    pub base: usize,
    pub neighbor: usize,
    pub delta: f64,
    /// Index of the synthetic window in the output class list.
    pub output_index: usize,
}

#[derive(Debug, Clone)]
pub struct SmoteOutcome {
    pub windows_by_class: BTreeMap<ClassId, Vec<SensorWindow>>,
    pub synthetics: Vec<SmoteRecord>,
}

fn sq_dist(a: &SensorWindow, b: &SensorWindow) -> f64 {
    a.data.iter().zip(b.data.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` nearest other members, ties broken by index.
fn nearest(class: &[SensorWindow], i: usize, k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = (0..class.len())
        .filter(|&j| j != i)
        .map(|j| (sq_dist(&class[i], &class[j]), j))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().take(k).map(|(_, j)| j).collect()
}

/// Oversamples every class below the target by interpolating between a random
/// member and one of its `k` nearest same-class neighbours (Euclidean on the
/// flattened window). Original windows are kept first and untouched.
pub fn smote_oversample(
    windows_by_class: &BTreeMap<ClassId, Vec<SensorWindow>>,
    cfg: &SmoteConfig,
) -> Result<SmoteOutcome> {
    if cfg.k_neighbors == 0 {
        return Err(Error::InvalidConfig("k_neighbors must be at least 1".into()));
    }
    let target = match cfg.target_per_class {
        SmoteTarget::MaxClass => windows_by_class.values().map(Vec::len).max().unwrap_or(0),
        SmoteTarget::Count(n) => n,
    };
    let mut rng = seeded_rng(cfg.seed);
    let mut out = BTreeMap::new();
    let mut synthetics = Vec::new();
    for (&class, members) in windows_by_class {
        let mut list = members.clone();
        if members.len() < target {
            if members.len() < 2 {
                return Err(Error::TooFewSamples {
                    context: format!("class {class}"),
                    count: members.len(),
                    need: 2,
                });
            }
            let k = cfg.k_neighbors.min(members.len() - 1);
            let neighbours: Vec<Vec<usize>> =
                (0..members.len()).map(|i| nearest(members, i, k)).collect();
            for _ in members.len()..target {
                let base = rng.random_range(0..members.len());
                let neighbor = neighbours[base][rng.random_range(0..k)];
                // uniform on (0, 1]
                let delta = 1.0 - rng.random::<f64>();
                let x1 = &members[base];
                let xn = &members[neighbor];
                let data = &x1.data + &((&xn.data - &x1.data) * delta);
                synthetics.push(SmoteRecord {
                    class,
                    base,
                    neighbor,
                    delta,
                    output_index: list.len(),
                });
                list.push(SensorWindow { data, ..x1.clone() });
            }
        }
        out.insert(class, list);
    }
    Ok(SmoteOutcome { windows_by_class: out, synthetics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn win(data: Array2<f64>, label: ClassId) -> SensorWindow {
        SensorWindow { data, label, subject_id: 0, timestamp: 0.0, window_seconds: 1.0 }
    }

    #[test]
    fn midpoint_and_endpoint() {
        let x1 = array![[0.0, 0.0]];
        let xn = array![[2.0, 2.0]];
        assert_eq!(&x1 + &((&xn - &x1) * 0.5), array![[1.0, 1.0]]);
        assert_eq!(&x1 + &((&xn - &x1) * 1.0), xn);
    }

    #[test]
    fn balances_and_keeps_originals() {
        let mut by = BTreeMap::new();
        by.insert(0, (0..10).map(|i| win(array![[i as f64, 1.0]], 0)).collect::<Vec<_>>());
        by.insert(1, (0..3).map(|i| win(array![[i as f64, -1.0]], 1)).collect::<Vec<_>>());
        let out = smote_oversample(&by, &SmoteConfig::default()).unwrap();
        assert_eq!(out.windows_by_class[&0], by[&0]);
        assert_eq!(out.windows_by_class[&1].len(), 10);
        assert_eq!(&out.windows_by_class[&1][..3], &by[&1][..]);
        assert_eq!(out.synthetics.len(), 7);
        for r in &out.synthetics {
            assert!(r.delta > 0.0 && r.delta <= 1.0);
            let g = &out.windows_by_class[&1][r.output_index];
            assert_eq!(g.data[[0, 1]], -1.0);
        }
    }

    #[test]
    fn target_already_met_is_noop() {
        let mut by = BTreeMap::new();
        by.insert(3, vec![win(array![[1.0]], 3), win(array![[2.0]], 3)]);
        let cfg = SmoteConfig { target_per_class: SmoteTarget::Count(2), ..SmoteConfig::default() };
        let out = smote_oversample(&by, &cfg).unwrap();
        assert_eq!(out.windows_by_class, by);
        assert!(out.synthetics.is_empty());
    }

    #[test]
    fn single_member_class_errors() {
        let mut by = BTreeMap::new();
        by.insert(0, vec![win(array![[1.0]], 0), win(array![[2.0]], 0)]);
        by.insert(1, vec![win(array![[1.0]], 1)]);
        assert!(matches!(
            smote_oversample(&by, &SmoteConfig::default()),
            Err(Error::TooFewSamples { count: 1, need: 2, .. })
        ));
    }

    #[test]
    fn neighbours_are_nearest() {
        let class: Vec<_> = [0.0, 10.0, 1.0, 2.5].iter().map(|&v| win(array![[v]], 0)).collect();
        assert_eq!(nearest(&class, 0, 2), vec![2, 3]);
        assert_eq!(nearest(&class, 1, 1), vec![3]);
    }

    #[test]
    fn target_serde() {
        #[derive(Deserialize)]
        struct T {
            t: SmoteTarget,
        }
        let a: T = toml::from_str("t = \"max-class\"").unwrap();
        assert_eq!(a.t, SmoteTarget::MaxClass);
        let b: T = toml::from_str("t = 40").unwrap();
        assert_eq!(b.t, SmoteTarget::Count(40));
        assert!(toml::from_str::<T>("t = \"most\"").is_err());
    }
}
