use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{generate_dataset, DatasetConfig, Sample, SplitBundle};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Split {
    Train,
    IdTest,
    OodTest,
}

#[derive(Serialize, Deserialize)]
struct Record {
    split: Split,
    label: usize,
    domain_id: usize,
    image_vector: Vec<f64>,
    caption_vector: Vec<f64>,
}

/// One JSON object per line: `{split, label, domain_id, image_vector, caption_vector}`.
pub fn write_ndjson<W: Write>(bundle: &SplitBundle, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    let parts = [
        (Split::Train, &bundle.train),
        (Split::IdTest, &bundle.id_test),
        (Split::OodTest, &bundle.ood_test),
    ];
    for (split, samples) in parts {
        for s in samples {
            let rec = Record {
                split,
                label: s.label,
                domain_id: s.domain_id,
                image_vector: s.image_vector.data().to_vec(),
                caption_vector: s.caption_vector.data().to_vec(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_ndjson<R: BufRead>(r: R) -> Result<SplitBundle> {
    let mut bundle = SplitBundle::default();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)
            .map_err(|e| Error::format("dataset record", format!("line {}: {e}", lineno + 1)))?;
        let sample = Sample {
            image_vector: Tensor::vector(rec.image_vector),
            caption_vector: Tensor::vector(rec.caption_vector),
            label: rec.label,
            domain_id: rec.domain_id,
        };
        match rec.split {
            Split::Train => bundle.train.push(sample),
            Split::IdTest => bundle.id_test.push(sample),
            Split::OodTest => bundle.ood_test.push(sample),
        }
    }
    Ok(bundle)
}

/// Anything that can hand the trainers a [`SplitBundle`].
pub trait DatasetSource {
    fn load(&self) -> Result<SplitBundle>;
}

pub struct SyntheticSource(pub DatasetConfig);

impl DatasetSource for SyntheticSource {
    fn load(&self) -> Result<SplitBundle> {
        generate_dataset(&self.0)
    }
}

pub struct NdjsonSource(pub PathBuf);

impl DatasetSource for NdjsonSource {
    fn load(&self) -> Result<SplitBundle> {
        read_ndjson(BufReader::new(File::open(&self.0)?))
    }
}
