use std::path::Path;

use serde::{Deserialize, Serialize};

use super::probe::ProbeRow;
use super::retrieval::PairRetrieval;
use super::svm::ZeroShotResult;
use crate::data::Modality;
use crate::error::{CoreError, IoContext, Result};

pub const RANKS_FILE: &str = "ranks.csv";
pub const ACCURACIES_FILE: &str = "accuracies.csv";
pub const PROBES_FILE: &str = "probes.csv";
pub const SUMMARY_FILE: &str = "summary.json";

pub const TIE_BREAK: &str = "equal similarities ordered by ascending target id";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRow {
    pub task: String,
    pub query: Modality,
    pub target: Modality,
    pub split_size: usize,
    pub split_medians: Vec<f64>,
    pub average_median_rank: f64,
    pub chance: f64,
}

impl RetrievalRow {
    pub fn new(task: &str, r: &PairRetrieval) -> Self {
        RetrievalRow {
            task: task.to_string(),
            query: r.query,
            target: r.target,
            split_size: r.result.split_size,
            split_medians: r.result.split_medians.clone(),
            average_median_rank: r.result.average_median_rank,
            chance: r.result.chance(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub task: String,
    pub train: Modality,
    pub test: Modality,
    pub accuracy: f64,
    pub chosen_c: f64,
    pub chance: f64,
}

impl AccuracyRow {
    pub fn new(task: &str, train: Modality, test: Modality, classes: usize, r: &ZeroShotResult) -> Self {
        AccuracyRow {
            task: task.to_string(),
            train,
            test,
            accuracy: r.accuracy,
            chosen_c: r.chosen_c,
            chance: 1.0 / classes as f64,
        }
    }
}

/// Published full-scale figure, kept for side-by-side reading only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub metric: String,
    pub method: String,
    pub direction: String,
    pub value: f64,
}

const MEDIAN_RANK_REFERENCE: [(&str, [f64; 6]); 5] = [
    ("Random", [500.0, 500.0, 500.0, 500.0, 500.0, 500.0]),
    ("Linear Reg.", [345.8, 319.8, 14.2, 18.0, 315.0, 309.0]),
    ("Model Transfer", [144.6, 143.8, 8.5, 10.8, 140.5, 142.0]),
    ("Ranking", [49.0, 47.8, 8.6, 8.2, 190.0, 189.5]),
    ("Both", [47.5, 49.5, 5.8, 6.0, 135.0, 140.5]),
];
const RANK_DIRECTIONS: [&str; 6] = ["image->sound", "sound->image", "image->text", "text->image", "text->sound", "sound->text"];

const ACCURACY_REFERENCE: [(&str, [f64; 9]); 2] = [
    ("Linear Reg.", [26.5, 3.3, 23.1, 3.0, 6.6, 2.9, 18.3, 3.4, 34.3]),
    ("Both", [32.6, 5.8, 33.8, 12.8, 9.0, 15.2, 22.6, 6.2, 40.3]),
];
const CHANCE_ACCURACY: f64 = 2.3;

/// Full-scale published numbers (median rank over splits of 1,000; accuracy
/// in percent over 42 classes). Not reproducible at desk scale.
pub fn reference_rows() -> Vec<ReferenceRow> {
    let mut rows = Vec::new();
    for (method, values) in MEDIAN_RANK_REFERENCE {
        for (dir, v) in RANK_DIRECTIONS.iter().zip(values) {
            rows.push(ReferenceRow {
                metric: "median_rank".into(),
                method: method.into(),
                direction: dir.to_string(),
                value: v,
            });
        }
    }
    let mods = ["image", "sound", "text"];
    let mut accuracy = |method: &str, values: [f64; 9]| {
        for (i, v) in values.into_iter().enumerate() {
            rows.push(ReferenceRow {
                metric: "accuracy_percent".into(),
                method: method.into(),
                direction: format!("{}->{}", mods[i / 3], mods[i % 3]),
                value: v,
            });
        }
    };
    accuracy("Chance", [CHANCE_ACCURACY; 9]);
    for (method, values) in ACCURACY_REFERENCE {
        accuracy(method, values);
    }
    rows
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tasks: Vec<String>,
    pub config: serde_json::Value,
    pub tie_break: String,
    pub retrieval: Vec<RetrievalRow>,
    pub accuracies: Vec<AccuracyRow>,
    pub probes: Vec<ProbeRow>,
    pub reference: Vec<ReferenceRow>,
}

impl EvalReport {
    pub fn new(config: serde_json::Value) -> Self {
        EvalReport {
            config,
            tie_break: TIE_BREAK.into(),
            reference: reference_rows(),
            ..EvalReport::default()
        }
    }

    /// Checks value ranges: median ranks within `[1, split]`, accuracies within `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        for r in &self.retrieval {
            let bad = r
                .split_medians
                .iter()
                .chain([&r.average_median_rank])
                .any(|&m| !(1.0..=r.split_size as f64).contains(&m));
            if bad {
                return Err(CoreError::Contract(format!(
                    "{} {}->{}: median rank outside [1, {}]",
                    r.task, r.query, r.target, r.split_size
                )));
            }
        }
        if let Some(a) = self.accuracies.iter().find(|a| !(0.0..=1.0).contains(&a.accuracy)) {
            return Err(CoreError::Contract(format!("{}: accuracy {} outside [0, 1]", a.task, a.accuracy)));
        }
        Ok(())
    }

    /// Writes the CSV tables and `summary.json` into `dir`, returning the
    /// paths written.
    pub fn write(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        self.validate()?;
        std::fs::create_dir_all(dir).at(dir)?;
        let mut written = Vec::new();

        let mut ranks = String::from("task,query,target,split,split_size,median_rank\n");
        for r in &self.retrieval {
            for (i, m) in r.split_medians.iter().enumerate() {
                ranks.push_str(&format!("{},{},{},{i},{},{m}\n", r.task, r.query, r.target, r.split_size));
            }
            ranks.push_str(&format!(
                "{},{},{},average,{},{}\n",
                r.task, r.query, r.target, r.split_size, r.average_median_rank
            ));
        }
        written.push(write_text(dir, RANKS_FILE, &ranks)?);

        let mut acc = String::from("task,train,test,accuracy,chosen_c,chance\n");
        for a in &self.accuracies {
            acc.push_str(&format!("{},{},{},{},{},{}\n", a.task, a.train, a.test, a.accuracy, a.chosen_c, a.chance));
        }
        written.push(write_text(dir, ACCURACIES_FILE, &acc)?);

        let mut probes = String::from("unit,modality,rank,sample_id,activation\n");
        for p in &self.probes {
            probes.push_str(&format!("{},{},{},{},{}\n", p.unit, p.modality, p.rank, p.sample_id, p.activation));
        }
        written.push(write_text(dir, PROBES_FILE, &probes)?);

        let summary = serde_json::to_string_pretty(self).expect("report serializes");
        written.push(write_text(dir, SUMMARY_FILE, &summary)?);
        Ok(written)
    }
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<std::path::PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, text).at(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_rows_cover_every_direction() {
        let rows = reference_rows();
        assert_eq!(rows.len(), 5 * 6 + 3 * 9);
        let both = rows
            .iter()
            .find(|r| r.method == "Both" && r.direction == "text->sound")
            .unwrap();
        assert_eq!(both.value, 135.0);
    }

    #[test]
    fn out_of_range_rank_fails_validation() {
        let mut report = EvalReport::new(serde_json::Value::Null);
        report.retrieval.push(RetrievalRow {
            task: "retrieval".into(),
            query: Modality::Image,
            target: Modality::Sound,
            split_size: 10,
            split_medians: vec![11.0],
            average_median_rank: 11.0,
            chance: 5.5,
        });
        assert!(report.validate().is_err());
    }
}
