use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::selectors::SelectionResult;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub target_fraction: f64,
    pub clean_fraction: f64,
    /// Share of the selected set drawn from the target component. Numerically the
    /// same as `target_fraction`; the rare-target experiments report it under this name.
    pub target_precision: f64,
}

pub fn selection_quality(sel: &SelectionResult, pool: &LabeledDataset) -> Result<QualityReport> {
    if sel.indices.is_empty() {
        return Err(Error::config("empty selection"));
    }
    let mut target = 0usize;
    let mut clean = 0usize;
    for &i in &sel.indices {
        if i >= pool.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: pool.len(),
            });
        }
        target += usize::from(pool.sources()[i].is_target());
        clean += usize::from(pool.clean_flags()[i]);
    }
    let n = sel.indices.len() as f64;
    Ok(QualityReport {
        target_fraction: target as f64 / n,
        clean_fraction: clean as f64 / n,
        target_precision: target as f64 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{LabeledExample, Provenance, Source};
    use crate::selectors::SelectorKind;

    #[test]
    fn fractions() {
        let mut rows = vec![
            LabeledExample::new(vec![0.0], 1, Source::Target),
            LabeledExample::new(vec![0.0], 1, Source::Target),
            LabeledExample::new(vec![0.0], 1, Source::Distractor(0)),
            LabeledExample::new(vec![0.0], 1, Source::Distractor(1)),
        ];
        rows[1].clean = false;
        let pool = LabeledDataset::from_examples(1, rows, Provenance::new("u", 0, "-")).unwrap();
        let sel = |indices: Vec<usize>| SelectionResult {
            budget: indices.len(),
            indices,
            selector: SelectorKind::Random,
            table_digest: String::new(),
        };
        let q = selection_quality(&sel(vec![0]), &pool).unwrap();
        assert_eq!(
            (q.target_fraction, q.clean_fraction, q.target_precision),
            (1.0, 1.0, 1.0)
        );
        let q = selection_quality(&sel(vec![0, 1, 2, 3]), &pool).unwrap();
        assert_eq!((q.target_fraction, q.clean_fraction), (0.5, 0.75));
        assert!(selection_quality(&sel(vec![9]), &pool).is_err());
    }
}
