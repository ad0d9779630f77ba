use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::patches::PatchSet;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Partition of patch indices into labeled-train, unlabeled-train and test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemiSplit {
    pub labeled_train: Vec<usize>,
    pub unlabeled_train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    /// `None` when every non-test labeled pixel is in the labeled pool.
    pub n_per_class: Option<usize>,
}

impl SemiSplit {
    /// All training indices (labeled and unlabeled), ascending.
    pub fn train(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .labeled_train
            .iter()
            .chain(&self.unlabeled_train)
            .copied()
            .collect();
        v.sort_unstable();
        v
    }

    /// Asserts the three sets are pairwise disjoint and cover `0..n`.
    pub fn check_partition(&self, n: usize) -> Result<()> {
        let mut seen = vec![0u8; n];
        for (set, name) in [
            (&self.labeled_train, "labeled"),
            (&self.unlabeled_train, "unlabeled"),
            (&self.test, "test"),
        ] {
            for &i in set {
                if i >= n {
                    return Err(Error::Data(format!("{name} index {i} out of range {n}")));
                }
                seen[i] += 1;
            }
        }
        match seen.iter().position(|&c| c != 1) {
            Some(i) => Err(Error::Data(format!("index {i} appears in {} split sets", seen[i]))),
            None => Ok(()),
        }
    }

    /// Writes `index,row,col,class,role` rows; `class` is the ground-truth
    /// label (0 for background).
    pub fn write_csv(&self, patches: &PatchSet, path: &Path) -> Result<()> {
        let mut role = vec![""; patches.len()];
        for &i in &self.labeled_train {
            role[i] = "labeled";
        }
        for &i in &self.unlabeled_train {
            role[i] = "unlabeled";
        }
        for &i in &self.test {
            role[i] = "test";
        }
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let res = (|| -> csv::Result<()> {
            w.write_record(["index", "row", "col", "class", "role"])?;
            for (i, &(r, c)) in patches.centers.iter().enumerate() {
                let class = patches.labels[i].map_or(0, |k| k + 1);
                w.write_record([
                    i.to_string(),
                    r.to_string(),
                    c.to_string(),
                    class.to_string(),
                    role[i].to_string(),
                ])?;
            }
            w.flush()?;
            Ok(())
        })();
        res.map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Largest-remainder allocation of `round(fraction · total)` test points
/// across classes proportionally to their sizes.
fn test_quota(counts: &[usize], fraction: f64) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let target = (fraction * total as f64).round() as usize;
    let exact: Vec<f64> = counts.iter().map(|&c| fraction * c as f64).collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut missing = target.saturating_sub(quota.iter().sum());
    for &k in order.iter().cycle().take(order.len() * 2) {
        if missing == 0 {
            break;
        }
        if quota[k] < counts[k] {
            quota[k] += 1;
            missing -= 1;
        }
    }
    quota
}

/// Stratified test draw first, then `n_per_class` labeled points per class
/// from the remainder; everything else (including background entries) is
/// unlabeled. Fully determined by `seed`.
pub fn make_split(
    labels: &[Option<usize>],
    classes: usize,
    n_per_class: Option<usize>,
    test_fraction: f64,
    seed: u64,
) -> Result<SemiSplit> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config(format!("test fraction {test_fraction} outside [0, 1)")));
    }
    if n_per_class == Some(0) {
        return Err(Error::Config("labels per class must be >= 1".into()));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    let mut unlabeled = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        match *l {
            Some(k) if k < classes => by_class[k].push(i),
            Some(k) => return Err(Error::Data(format!("label index {k} >= {classes} classes"))),
            None => unlabeled.push(i),
        }
    }
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let quota = test_quota(&counts, test_fraction);
    let mut rng = Rng::new(seed);
    let (mut labeled, mut test) = (Vec::new(), Vec::new());
    for (k, idx) in by_class.iter_mut().enumerate() {
        rng.shuffle(idx);
        let (t, rest) = idx.split_at(quota[k]);
        test.extend_from_slice(t);
        let take = match n_per_class {
            Some(n) if rest.len() < n => {
                return Err(Error::Data(format!(
                    "class {} has {} non-test points, {n} labels requested",
                    k + 1,
                    rest.len()
                )))
            }
            Some(n) => n,
            None => rest.len(),
        };
        labeled.extend_from_slice(&rest[..take]);
        unlabeled.extend_from_slice(&rest[take..]);
    }
    labeled.sort_unstable();
    unlabeled.sort_unstable();
    test.sort_unstable();
    Ok(SemiSplit {
        labeled_train: labeled,
        unlabeled_train: unlabeled,
        test,
        seed,
        n_per_class,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Balance {
    Upsample,
    Downsample,
}

/// Equalizes class counts of a labeled index pool. Upsampling keeps every
/// index and adds draws with replacement up to the largest class;
/// downsampling draws without replacement down to the smallest class.
pub fn balance_labels(
    indices: &[usize],
    labels: &[Option<usize>],
    strategy: Balance,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in indices {
        let k = labels[i].ok_or_else(|| Error::Data(format!("index {i} has no label")))?;
        groups.entry(k).or_default().push(i);
    }
    if groups.is_empty() {
        return Ok(Vec::new());
    }
    let max = groups.values().map(Vec::len).max().unwrap();
    let min = groups.values().map(Vec::len).min().unwrap();
    let mut out = Vec::new();
    for members in groups.values_mut() {
        match strategy {
            Balance::Upsample => {
                out.extend_from_slice(members);
                for _ in members.len()..max {
                    out.push(members[rng.index(members.len())]);
                }
            }
            Balance::Downsample => {
                rng.shuffle(members);
                out.extend_from_slice(&members[..min]);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(counts: &[usize]) -> Vec<Option<usize>> {
        counts
            .iter()
            .enumerate()
            .flat_map(|(k, &n)| std::iter::repeat_n(Some(k), n))
            .collect()
    }

    #[test]
    fn five_per_class_nine_classes() {
        let l = labels(&[40; 9]);
        let s = make_split(&l, 9, Some(5), 0.25, 1).unwrap();
        assert_eq!(s.labeled_train.len(), 45);
        assert_eq!(s.test.len(), 90);
        s.check_partition(l.len()).unwrap();
        for k in 0..9 {
            assert_eq!(s.labeled_train.iter().filter(|&&i| l[i] == Some(k)).count(), 5);
        }
    }

    #[test]
    fn test_size_is_rounded_quarter_of_total() {
        let l = labels(&[7, 3, 11]);
        let s = make_split(&l, 3, Some(1), 0.25, 3).unwrap();
        assert_eq!(s.test.len(), (0.25f64 * 21.0).round() as usize);
    }

    #[test]
    fn same_seed_same_split_and_shared_test_set() {
        let l = labels(&[30, 20, 25]);
        let a = make_split(&l, 3, Some(5), 0.25, 9).unwrap();
        assert_eq!(a, make_split(&l, 3, Some(5), 0.25, 9).unwrap());
        let b = make_split(&l, 3, Some(10), 0.25, 9).unwrap();
        assert_eq!(a.test, b.test);
        assert_ne!(a, make_split(&l, 3, Some(5), 0.25, 10).unwrap());
    }

    #[test]
    fn too_small_class_is_named() {
        let l = labels(&[30, 4]);
        let msg = make_split(&l, 2, Some(5), 0.25, 0).unwrap_err().to_string();
        assert!(msg.contains("class 2"), "{msg}");
    }

    #[test]
    fn background_goes_to_unlabeled_pool() {
        let mut l = labels(&[8, 8]);
        l.extend([None, None]);
        let s = make_split(&l, 2, Some(2), 0.25, 0).unwrap();
        assert!(s.unlabeled_train.contains(&16) && s.unlabeled_train.contains(&17));
        s.check_partition(l.len()).unwrap();
    }

    #[test]
    fn balancing() {
        let l = vec![Some(0), Some(0), Some(1), Some(1), Some(1), Some(1)];
        let idx: Vec<usize> = (0..6).collect();
        let count = |v: &[usize], k| v.iter().filter(|&&i| l[i] == Some(k)).count();
        let up = balance_labels(&idx, &l, Balance::Upsample, &mut Rng::new(0)).unwrap();
        assert_eq!((count(&up, 0), count(&up, 1)), (4, 4));
        let down = balance_labels(&idx, &l, Balance::Downsample, &mut Rng::new(0)).unwrap();
        assert_eq!((count(&down, 0), count(&down, 1)), (2, 2));

        let balanced = [0usize, 1, 2, 3];
        let mut same = balance_labels(&balanced, &l, Balance::Downsample, &mut Rng::new(4)).unwrap();
        same.sort_unstable();
        assert_eq!(same, balanced);
    }
}
