//! Labeled example storage and its text file format.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Which mixture component generated an example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    Target,
    Distractor(u16),
}

impl Source {
    pub fn is_target(self) -> bool {
        matches!(self, Source::Target)
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Target => f.write_str("target"),
            Source::Distractor(k) => write!(f, "distractor:{k}"),
        }
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "target" {
            return Ok(Source::Target);
        }
        s.strip_prefix("distractor:")
            .and_then(|k| k.parse().ok())
            .map(Source::Distractor)
            .ok_or_else(|| Error::format("dataset", format!("unknown source tag {s:?}")))
    }
}

/// An owned example. Labels are ±1.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: i8,
    pub source: Source,
    pub clean: bool,
}

impl LabeledExample {
    pub fn new(features: Vec<f64>, label: i8, source: Source) -> Self {
        Self {
            features,
            label,
            source,
            clean: true,
        }
    }

    pub fn as_ref(&self) -> ExampleRef<'_> {
        ExampleRef {
            features: &self.features,
            label: self.label,
            source: self.source,
            clean: self.clean,
        }
    }
}

/// Borrowed view of one row of a [`LabeledDataset`].
#[derive(Debug, Clone, Copy)]
pub struct ExampleRef<'a> {
    pub features: &'a [f64],
    pub label: i8,
    pub source: Source,
    pub clean: bool,
}

impl ExampleRef<'_> {
    #[inline]
    pub fn y(&self) -> f64 {
        f64::from(self.label)
    }

    pub fn to_owned(&self) -> LabeledExample {
        LabeledExample {
            features: self.features.to_vec(),
            label: self.label,
            source: self.source,
            clean: self.clean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub seed: u64,
    pub config_digest: String,
}

impl Provenance {
    pub fn new(generator: impl Into<String>, seed: u64, config_digest: impl Into<String>) -> Self {
        Self {
            generator: generator.into(),
            seed,
            config_digest: config_digest.into(),
        }
    }
}

/// Row-major example store. Rows keep the order they were generated in.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<i8>,
    sources: Vec<Source>,
    clean: Vec<bool>,
    provenance: Provenance,
}

impl LabeledDataset {
    pub fn from_examples(
        dim: usize,
        examples: Vec<LabeledExample>,
        provenance: Provenance,
    ) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::config("dataset must contain at least one example"));
        }
        if dim == 0 {
            return Err(Error::config("dataset dimension must be positive"));
        }
        let mut features = Vec::with_capacity(dim * examples.len());
        let mut labels = Vec::with_capacity(examples.len());
        let mut sources = Vec::with_capacity(examples.len());
        let mut clean = Vec::with_capacity(examples.len());
        for (i, ex) in examples.into_iter().enumerate() {
            if ex.features.len() != dim {
                return Err(Error::config(format!(
                    "example {i} has dimension {} but dataset declares {dim}",
                    ex.features.len()
                )));
            }
            if ex.label != 1 && ex.label != -1 {
                return Err(Error::config(format!(
                    "example {i} label {} is not ±1",
                    ex.label
                )));
            }
            features.extend_from_slice(&ex.features);
            labels.push(ex.label);
            sources.push(ex.source);
            clean.push(ex.clean);
        }
        Ok(Self {
            dim,
            features,
            labels,
            sources,
            clean,
            provenance,
        })
    }

    pub(crate) fn from_parts(
        dim: usize,
        features: Vec<f64>,
        labels: Vec<i8>,
        sources: Vec<Source>,
        clean: Vec<bool>,
        provenance: Provenance,
    ) -> Self {
        debug_assert_eq!(features.len(), dim * labels.len());
        debug_assert_eq!(labels.len(), sources.len());
        debug_assert_eq!(labels.len(), clean.len());
        Self {
            dim,
            features,
            labels,
            sources,
            clean,
            provenance,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn example(&self, i: usize) -> ExampleRef<'_> {
        ExampleRef {
            features: self.row(i),
            label: self.labels[i],
            source: self.sources[i],
            clean: self.clean[i],
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    pub fn sources(&self) -> &[Source] {
        &self.sources
    }

    pub fn clean_flags(&self) -> &[bool] {
        &self.clean
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = ExampleRef<'_>> + '_ {
        (0..self.len()).map(move |i| self.example(i))
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize], generator: &str) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::config("subset must be nonempty"));
        }
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        let mut sources = Vec::with_capacity(indices.len());
        let mut clean = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.len(),
                });
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
            sources.push(self.sources[i]);
            clean.push(self.clean[i]);
        }
        let provenance = Provenance::new(
            generator,
            self.provenance.seed,
            crate::rng::digest_bytes(
                &indices
                    .iter()
                    .flat_map(|i| (*i as u64).to_le_bytes())
                    .chain(self.provenance.generator.bytes())
                    .chain(self.provenance.config_digest.bytes())
                    .collect::<Vec<u8>>(),
            ),
        );
        Ok(Self::from_parts(
            self.dim, features, labels, sources, clean, provenance,
        ))
    }

    pub(crate) fn labels_mut(&mut self) -> &mut [i8] {
        &mut self.labels
    }

    pub(crate) fn clean_mut(&mut self) -> &mut [bool] {
        &mut self.clean
    }

    pub(crate) fn set_provenance(&mut self, provenance: Provenance) {
        self.provenance = provenance;
    }

    /// Fraction of examples whose source is the target component.
    pub fn target_share(&self) -> f64 {
        let n = self.sources.iter().filter(|s| s.is_target()).count();
        n as f64 / self.len() as f64
    }

    /// Hash of every stored value; identical data gives identical digests.
    pub fn content_digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        for v in &self.features {
            h.update(v.to_le_bytes());
        }
        for (i, l) in self.labels.iter().enumerate() {
            h.update([*l as u8, self.clean[i] as u8]);
            match self.sources[i] {
                Source::Target => h.update([0u8, 0, 0]),
                Source::Distractor(k) => {
                    h.update([1u8]);
                    h.update(k.to_le_bytes());
                }
            }
        }
        let out = h.finalize();
        out[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Writes the text format: one header line, then one comma-separated record per
    /// example (features with 17 significant digits, label as 0/1, source tag, clean flag).
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "tacs-dataset d={} n={} generator={} seed={} digest={}",
            self.dim,
            self.len(),
            self.provenance.generator,
            self.provenance.seed,
            self.provenance.config_digest
        )?;
        let mut line = String::with_capacity(self.dim * 26 + 32);
        for ex in self.iter() {
            line.clear();
            for v in ex.features {
                line.push_str(&format!("{v:.16e},"));
            }
            let label01 = if ex.label > 0 { 1 } else { 0 };
            line.push_str(&format!("{label01},{},{}", ex.source, u8::from(ex.clean)));
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format("dataset", "empty file"))?
            .map_err(|e| Error::format("dataset", e.to_string()))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("tacs-dataset") {
            return Err(Error::format("dataset", "missing tacs-dataset header"));
        }
        let mut dim = None;
        let mut n = None;
        let mut generator = None;
        let mut seed = None;
        let mut digest = None;
        for f in fields {
            let (k, v) = f
                .split_once('=')
                .ok_or_else(|| Error::format("dataset", format!("bad header field {f:?}")))?;
            let bad = || Error::format("dataset", format!("bad header value {f:?}"));
            match k {
                "d" => dim = Some(v.parse::<usize>().map_err(|_| bad())?),
                "n" => n = Some(v.parse::<usize>().map_err(|_| bad())?),
                "generator" => generator = Some(v.to_string()),
                "seed" => seed = Some(v.parse::<u64>().map_err(|_| bad())?),
                "digest" => digest = Some(v.to_string()),
                _ => {
                    return Err(Error::format(
                        "dataset",
                        format!("unknown header key {k:?}"),
                    ))
                }
            }
        }
        let missing = |k: &str| Error::format("dataset", format!("header lacks {k}"));
        let dim = dim.ok_or_else(|| missing("d"))?;
        let n = n.ok_or_else(|| missing("n"))?;
        let provenance = Provenance::new(
            generator.ok_or_else(|| missing("generator"))?,
            seed.ok_or_else(|| missing("seed"))?,
            digest.ok_or_else(|| missing("digest"))?,
        );

        let mut features = Vec::with_capacity(dim * n);
        let mut labels = Vec::with_capacity(n);
        let mut sources = Vec::with_capacity(n);
        let mut clean = Vec::with_capacity(n);
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::format("dataset", e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::format("dataset", format!("record {lineno}: {what}"));
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != dim + 3 {
                return Err(bad("wrong column count"));
            }
            for c in &cols[..dim] {
                let v: f64 = c.parse().map_err(|_| bad("unparseable feature"))?;
                features.push(v);
            }
            labels.push(match cols[dim] {
                "1" => 1,
                "0" => -1,
                _ => return Err(bad("label must be 0 or 1")),
            });
            sources.push(cols[dim + 1].parse()?);
            clean.push(match cols[dim + 2] {
                "1" => true,
                "0" => false,
                _ => return Err(bad("clean flag must be 0 or 1")),
            });
        }
        if labels.len() != n {
            return Err(Error::format(
                "dataset",
                format!("header declares {n} records, found {}", labels.len()),
            ));
        }
        if n == 0 || dim == 0 {
            return Err(Error::format("dataset", "empty dataset"));
        }
        Ok(Self::from_parts(
            dim, features, labels, sources, clean, provenance,
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> LabeledDataset {
        LabeledDataset::from_examples(
            2,
            vec![
                LabeledExample::new(vec![0.1, -2.5], 1, Source::Target),
                LabeledExample {
                    features: vec![1.0 / 3.0, f64::MIN_POSITIVE],
                    label: -1,
                    source: Source::Distractor(3),
                    clean: false,
                },
            ],
            Provenance::new("unit", 9, "abc"),
        )
        .unwrap()
    }

    #[test]
    fn rejects_mixed_dimensions_and_bad_labels() {
        let p = Provenance::new("unit", 0, "x");
        let r = LabeledDataset::from_examples(
            2,
            vec![LabeledExample::new(vec![0.0], 1, Source::Target)],
            p.clone(),
        );
        assert!(matches!(r, Err(Error::InvalidConfig(_))));
        let r = LabeledDataset::from_examples(
            1,
            vec![LabeledExample::new(vec![0.0], 0, Source::Target)],
            p.clone(),
        );
        assert!(r.is_err());
        assert!(LabeledDataset::from_examples(1, vec![], p).is_err());
    }

    #[test]
    fn text_format_round_trips_bits() {
        let ds = tiny();
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("tacs-dataset d=2 n=2 generator=unit seed=9 digest=abc\n"));
        // labels are written as 0/1
        assert!(text.lines().nth(2).unwrap().ends_with(",0,distractor:3,0"));
        let back = LabeledDataset::read_from(&buf[..]).unwrap();
        assert_eq!(back, ds);
        for (a, b) in back.features.iter().zip(&ds.features) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let ds = tiny();
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(2).map(|l| format!("{l}\n")).collect();
        assert!(matches!(
            LabeledDataset::read_from(cut.as_bytes()),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn subset_keeps_order_and_checks_bounds() {
        let ds = tiny();
        let s = ds.subset(&[1, 0], "sub").unwrap();
        assert_eq!(s.example(0).label, -1);
        assert_eq!(s.example(1).source, Source::Target);
        assert!(matches!(
            ds.subset(&[2], "sub"),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
    }
}
