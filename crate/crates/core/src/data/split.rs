use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Labeled/unlabeled partition of a dataset.
///
/// `labeled_ids` is kept sorted; batch streams shuffle it on their own.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitManifest {
    pub dataset_size: usize,
    pub labeled_ids: Vec<usize>,
    pub ratio_name: String,
    pub seed: u64,
}

/// Fraction denominator for a ratio name: `"full"` is 1, `"1/N"` is `N`.
pub fn ratio_denominator(ratio_name: &str) -> Result<usize> {
    if ratio_name == "full" {
        return Ok(1);
    }
    ratio_name
        .strip_prefix("1/")
        .and_then(|d| d.parse::<usize>().ok())
        .filter(|&d| d >= 1)
        .ok_or_else(|| {
            Error::Config(format!(
                "unknown split ratio {ratio_name:?} (expected \"full\" or \"1/N\", e.g. \"1/16\")"
            ))
        })
}

/// Shuffles `0..dataset_size` with `seed` and labels the first
/// `ceil(dataset_size / N)` indices.
pub fn make_split(dataset_size: usize, ratio_name: &str, seed: u64) -> Result<SplitManifest> {
    let denom = ratio_denominator(ratio_name)?;
    let mut ids: Vec<usize> = (0..dataset_size).collect();
    let count = dataset_size.div_ceil(denom);
    if denom > 1 {
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let mut labeled_ids = ids[..count].to_vec();
    labeled_ids.sort_unstable();
    Ok(SplitManifest { dataset_size, labeled_ids, ratio_name: ratio_name.to_string(), seed })
}

impl SplitManifest {
    pub fn unlabeled_ids(&self) -> Vec<usize> {
        let mut labeled = vec![false; self.dataset_size];
        for &i in &self.labeled_ids {
            labeled[i] = true;
        }
        (0..self.dataset_size).filter(|&i| !labeled[i]).collect()
    }

    pub fn is_labeled(&self, id: usize) -> bool {
        self.labeled_ids.binary_search(&id).is_ok()
    }

    /// Header line `size ratio seed`, then one labeled id per line.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {} {}\n", self.dataset_size, self.ratio_name, self.seed);
        for id in &self.labeled_ids {
            s.push_str(&id.to_string());
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Data("empty manifest".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let [size, ratio, seed] = fields.as_slice() else {
            return Err(Error::Data(format!("manifest header {header:?} is not `size ratio seed`")));
        };
        let dataset_size = size.parse().map_err(|_| Error::Data(format!("bad manifest size {size:?}")))?;
        ratio_denominator(ratio)?;
        let seed = seed.parse().map_err(|_| Error::Data(format!("bad manifest seed {seed:?}")))?;
        let mut labeled_ids = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let id: usize = line
                .parse()
                .map_err(|_| Error::Data(format!("manifest line {}: bad id {line:?}", n + 2)))?;
            if id >= dataset_size {
                return Err(Error::Data(format!("manifest id {id} outside dataset of {dataset_size}")));
            }
            labeled_ids.push(id);
        }
        if labeled_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("manifest ids must be sorted and unique".into()));
        }
        Ok(SplitManifest { dataset_size, labeled_ids, ratio_name: ratio.to_string(), seed })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn split_sizes_match_partition_protocols() {
        assert_eq!(make_split(1464, "1/16", 0).unwrap().labeled_ids.len(), 92);
        assert_eq!(make_split(1464, "1/8", 0).unwrap().labeled_ids.len(), 183);
        assert_eq!(make_split(2975, "1/8", 0).unwrap().labeled_ids.len(), 372);
        assert_eq!(make_split(2975, "1/16", 0).unwrap().labeled_ids.len(), 186);
        assert_eq!(make_split(2975, "1/2", 0).unwrap().labeled_ids.len(), 1488);
        let full = make_split(10, "full", 3).unwrap();
        assert_eq!(full.labeled_ids, (0..10).collect::<Vec<_>>());
        assert!(full.unlabeled_ids().is_empty());
    }

    #[test]
    fn unknown_ratio_is_config_error() {
        assert!(matches!(make_split(10, "3/4", 0), Err(Error::Config(_))));
        assert!(matches!(make_split(10, "1/0", 0), Err(Error::Config(_))));
    }

    #[test]
    fn deterministic_by_seed() {
        assert_eq!(make_split(500, "1/8", 11).unwrap(), make_split(500, "1/8", 11).unwrap());
        assert_ne!(make_split(500, "1/8", 11).unwrap(), make_split(500, "1/8", 12).unwrap());
    }

    proptest! {
        #[test]
        fn manifest_text_round_trip(size in 1usize..400, denom in 1usize..20, seed in any::<u64>()) {
            let m = make_split(size, &format!("1/{denom}"), seed).unwrap();
            prop_assert_eq!(m.labeled_ids.len(), size.div_ceil(denom));
            prop_assert!(m.labeled_ids.iter().all(|&i| i < size));
            prop_assert_eq!(SplitManifest::parse(&m.to_text()).unwrap(), m);
        }
    }
}
