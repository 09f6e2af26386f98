use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::rng::{key_of, SeededRng};

use super::{ImageRecord, Source};

const HEADER: &str = "# split manifest v1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::invalid(format!("split ratios must lie in [0, 1], got {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split ratios must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

/// Ratios plus an optional fixed number of test images per source.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SplitPlan {
    pub ratios: SplitRatios,
    pub test_per_source: BTreeMap<Source, usize>,
}

/// Train/val/test id lists. Counts per source are `[train, val, test]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub per_source: BTreeMap<String, [usize; 3]>,
}

/// Splits `n` items into train/val/test counts by rounding train and val.
fn split_counts(n: usize, train: f64, val: f64) -> (usize, usize) {
    let n_train = ((n as f64) * train).round() as usize;
    let n_val = (((n as f64) * val).round() as usize).min(n - n_train.min(n));
    (n_train.min(n), n_val)
}

/// Largest-remainder apportionment of `total` across `sizes`, capped by each size.
fn apportion(total: usize, sizes: &[usize]) -> Vec<usize> {
    let all: usize = sizes.iter().sum();
    if all == 0 {
        return vec![0; sizes.len()];
    }
    let exact: Vec<f64> = sizes.iter().map(|&s| total as f64 * s as f64 / all as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut left = total - out.iter().sum::<usize>();
    for &i in order.iter().cycle().take(sizes.len() * 2) {
        if left == 0 {
            break;
        }
        if out[i] < sizes[i] {
            out[i] += 1;
            left -= 1;
        }
    }
    out
}

/// Seeded stratified split. Without per-source quotas each class is
/// shuffled and cut by the ratios, so per-class proportions are within one
/// sample of the request. With quotas, each listed source first gives up
/// exactly its quota to the test set (stratified by class inside the
/// source); everything left is divided between train and val in the ratio
/// `train : val`.
pub fn stratified_split(records: &[ImageRecord], plan: &SplitPlan, seed: u64) -> Result<SplitManifest> {
    plan.ratios.validate()?;
    let mut ids = BTreeSet::new();
    for r in records {
        if !ids.insert(r.id.as_str()) {
            return Err(Error::invalid(format!("duplicate record id `{}`", r.id)));
        }
    }
    let classes: BTreeSet<u8> = records.iter().map(|r| r.label).collect();
    if classes.len() < 2 {
        return Err(Error::InsufficientSamples(format!(
            "stratified split needs both classes, found labels {classes:?}"
        )));
    }
    let base = SeededRng::new(seed);
    fn shuffled<'r>(base: &SeededRng, key: String, mut members: Vec<&'r ImageRecord>) -> Vec<&'r ImageRecord> {
        members.sort_by(|a, b| a.id.cmp(&b.id));
        base.derive(key_of(&key)).shuffle(&mut members);
        members
    }

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    if plan.test_per_source.is_empty() {
        for label in [0u8, 1] {
            let members = shuffled(&base, format!("class/{label}"), records.iter().filter(|r| r.label == label).collect());
            let (n_train, n_val) = split_counts(members.len(), plan.ratios.train, plan.ratios.val);
            train.extend(members[..n_train].iter().copied());
            val.extend(members[n_train..n_train + n_val].iter().copied());
            test.extend(members[n_train + n_val..].iter().copied());
        }
    } else {
        let holdout = plan.ratios.train + plan.ratios.val;
        let train_share = if holdout > 0.0 { plan.ratios.train / holdout } else { 0.0 };
        let sources: BTreeSet<Source> = records.iter().map(|r| r.source).collect();
        for source in sources {
            let groups: Vec<Vec<&ImageRecord>> = [0u8, 1]
                .iter()
                .map(|&label| {
                    shuffled(
                        &base,
                        format!("{source}/{label}"),
                        records.iter().filter(|r| r.source == source && r.label == label).collect(),
                    )
                })
                .collect();
            let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
            let quota = plan.test_per_source.get(&source).copied().unwrap_or(0);
            let available: usize = sizes.iter().sum();
            if quota > available {
                return Err(Error::InsufficientSamples(format!(
                    "source {source} has {available} records, test quota is {quota}"
                )));
            }
            let test_take = apportion(quota, &sizes);
            for (members, &t) in groups.iter().zip(&test_take) {
                test.extend(members[..t].iter().copied());
                let rest = &members[t..];
                let n_train = ((rest.len() as f64) * train_share).round() as usize;
                train.extend(rest[..n_train].iter().copied());
                val.extend(rest[n_train..].iter().copied());
            }
        }
    }

    let mut per_source: BTreeMap<String, [usize; 3]> = BTreeMap::new();
    for (slot, list) in [&train, &val, &test].iter().enumerate() {
        for r in list.iter() {
            per_source.entry(r.source.tag().to_string()).or_default()[slot] += 1;
        }
    }
    let to_ids = |list: Vec<&ImageRecord>| list.into_iter().map(|r| r.id.clone()).collect();
    Ok(SplitManifest {
        seed,
        ratios: plan.ratios,
        train: to_ids(train),
        val: to_ids(val),
        test: to_ids(test),
        per_source,
    })
}

impl SplitManifest {
    pub fn lists(&self) -> [(&'static str, &Vec<String>); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }

    /// Line-oriented text form: header, seed, ratios, per-source counts,
    /// then one `<split>\t<id>` row per record.
    pub fn to_text(&self) -> Result<String> {
        let mut out = String::new();
        let _ = writeln!(out, "{HEADER}");
        let _ = writeln!(out, "seed\t{}", self.seed);
        let r = self.ratios;
        let _ = writeln!(out, "ratios\t{:?}\t{:?}\t{:?}", r.train, r.val, r.test);
        for (source, [a, b, c]) in &self.per_source {
            let _ = writeln!(out, "source\t{source}\t{a}\t{b}\t{c}");
        }
        for (name, list) in self.lists() {
            for id in list {
                if id.contains(['\t', '\n', '\r']) || id.is_empty() {
                    return Err(Error::invalid(format!("record id {id:?} cannot be written to a manifest")));
                }
                let _ = writeln!(out, "{name}\t{id}");
            }
        }
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |detail: String| Error::Parse {
            what: "split manifest",
            detail,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, HEADER)) => {}
            other => return Err(bad(format!("missing header, found {:?}", other.map(|(_, l)| l)))),
        }
        let mut seed = None;
        let mut ratios = None;
        let mut per_source = BTreeMap::new();
        let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for (no, line) in lines {
            let fields: Vec<&str> = line.split('\t').collect();
            let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| bad(format!("line {}: bad number {s:?}", no + 1))) };
            let count = |s: &str| -> Result<usize> { s.parse().map_err(|_| bad(format!("line {}: bad count {s:?}", no + 1))) };
            match fields.as_slice() {
                ["seed", s] => seed = Some(s.parse::<u64>().map_err(|_| bad(format!("line {}: bad seed", no + 1)))?),
                ["ratios", a, b, c] => {
                    ratios = Some(SplitRatios {
                        train: num(a)?,
                        val: num(b)?,
                        test: num(c)?,
                    })
                }
                ["source", name, a, b, c] => {
                    per_source.insert(name.to_string(), [count(a)?, count(b)?, count(c)?]);
                }
                ["train", id] => train.push(id.to_string()),
                ["val", id] => val.push(id.to_string()),
                ["test", id] => test.push(id.to_string()),
                _ => return Err(bad(format!("line {}: unrecognized row {line:?}", no + 1))),
            }
        }
        Ok(SplitManifest {
            seed: seed.ok_or_else(|| bad("missing seed".into()))?,
            ratios: ratios.ok_or_else(|| bad("missing ratios".into()))?,
            train,
            val,
            test,
            per_source,
        })
    }

    /// Fails if an id appears twice across (or within) the three lists.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (name, list) in self.lists() {
            for id in list {
                if !seen.insert(id.as_str()) {
                    return Err(Error::invalid(format!("id `{id}` appears more than once (in {name})")));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn records(pos: usize, neg: usize, source: Source) -> Vec<ImageRecord> {
        let px = Tensor::zeros(vec![3, 1, 1]).unwrap();
        (0..pos)
            .map(|i| (format!("{source}/y{i}"), 1))
            .chain((0..neg).map(|i| (format!("{source}/no{i}"), 0)))
            .map(|(id, label)| ImageRecord {
                id,
                pixels: px.clone(),
                label,
                source,
            })
            .collect()
    }

    #[test]
    fn apportion_hits_total() {
        assert_eq!(apportion(450, &[300, 300]), vec![225, 225]);
        assert_eq!(apportion(5, &[1, 1, 1]).iter().sum::<usize>(), 3);
        assert_eq!(apportion(3, &[2, 1]), vec![2, 1]);
    }

    #[test]
    fn ratios_must_sum_to_one() {
        let r = records(5, 5, Source::I);
        let plan = SplitPlan {
            ratios: SplitRatios {
                train: 0.7,
                val: 0.2,
                test: 0.2,
            },
            ..SplitPlan::default()
        };
        assert!(stratified_split(&r, &plan, 1).is_err());
    }

    #[test]
    fn single_class_rejected() {
        let r = records(5, 0, Source::I);
        assert!(matches!(
            stratified_split(&r, &SplitPlan::default(), 1),
            Err(Error::InsufficientSamples(_))
        ));
    }

    #[test]
    fn malformed_manifest_rejected() {
        assert!(SplitManifest::from_text("nope\n").is_err());
        assert!(SplitManifest::from_text(&format!("{HEADER}\nseed\tx\n")).is_err());
        assert!(SplitManifest::from_text(&format!("{HEADER}\nseed\t1\n")).is_err());
    }
}
