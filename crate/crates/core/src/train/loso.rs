use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{argmax, fit, predict, TrainConfig};
use super::manifest::{Class, Dataset, Manifest};
use super::metrics::{uar, uf1, ConfusionMatrix};
use crate::error::{Error, Result};
use crate::flow::CompositeFlowMap;
use crate::model::{HtNet, HtNetParams};

/// One leave-one-subject-out fold; indices point into the split input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub subject: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// One fold per distinct subject key, in sorted key order.
pub fn folds_by_subject<S: AsRef<str>>(subjects: &[S]) -> Result<Vec<Fold>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in subjects.iter().enumerate() {
        groups.entry(s.as_ref()).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(Error::Protocol(format!(
            "leave-one-subject-out needs at least 2 subjects, found {}",
            groups.len()
        )));
    }
    Ok(groups
        .into_iter()
        .map(|(subject, test)| Fold {
            subject: subject.to_string(),
            train: (0..subjects.len()).filter(|i| subjects[*i].as_ref() != subject).collect(),
            test,
        })
        .collect())
}

/// Folds over manifest entries, keyed by dataset-namespaced subject.
pub fn loso_split(manifest: &Manifest) -> Result<Vec<Fold>> {
    let keys: Vec<String> = manifest.entries.iter().map(|e| e.subject_key()).collect();
    folds_by_subject(&keys)
}

/// A labelled composite map ready for training or evaluation.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub subject: String,
    pub dataset: Dataset,
    pub class: Class,
    pub map: CompositeFlowMap,
}

/// Something that can be trained on one fold and then score held-out samples.
pub trait Learner: Sync {
    type Model: Send;

    /// Returns the trained model and its per-epoch training loss.
    fn fit(&self, train: &[&Sample], seed: u64) -> Result<(Self::Model, Vec<f64>)>;

    /// One logit vector per sample.
    fn predict(&self, model: &Self::Model, test: &[&Sample]) -> Result<Vec<Vec<f64>>>;
}

/// Trains a fresh network per fold.
#[derive(Clone, Debug)]
pub struct HtNetLearner {
    pub net: HtNet,
    pub train: TrainConfig,
}

impl Learner for HtNetLearner {
    type Model = HtNetParams;

    fn fit(&self, train: &[&Sample], seed: u64) -> Result<(HtNetParams, Vec<f64>)> {
        let maps: Vec<&CompositeFlowMap> = train.iter().map(|s| &s.map).collect();
        let labels: Vec<usize> = train.iter().map(|s| s.class.index()).collect();
        let cfg = TrainConfig {
            seed,
            ..self.train.clone()
        };
        let out = fit(&self.net, self.net.init_params(seed), &maps, &labels, &cfg)?;
        Ok((out.params, out.loss_curve))
    }

    fn predict(&self, model: &HtNetParams, test: &[&Sample]) -> Result<Vec<Vec<f64>>> {
        let maps: Vec<&CompositeFlowMap> = test.iter().map(|s| &s.map).collect();
        predict(&self.net, model, &maps, self.train.batch_size)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePrediction {
    pub sample_id: String,
    pub dataset: Dataset,
    pub truth: Class,
    pub predicted: Class,
    pub logits: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub subject: String,
    pub train_size: usize,
    pub final_train_loss: Option<f64>,
    pub predictions: Vec<SamplePrediction>,
    pub confusion: ConfusionMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub uf1: f64,
    pub uar: f64,
    pub samples: u64,
    pub confusion: ConfusionMatrix,
    /// Classes with undefined F1 or recall, scored as 0.
    pub empty_classes: Vec<Class>,
}

impl MetricSummary {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Result<Self> {
        Ok(MetricSummary {
            uf1: uf1(&confusion)?,
            uar: uar(&confusion)?,
            samples: confusion.total(),
            empty_classes: confusion
                .empty_classes()
                .into_iter()
                .filter_map(Class::from_index)
                .collect(),
            confusion,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LosoReport {
    /// Metrics over TP/FP/FN pooled across every fold.
    pub pooled: MetricSummary,
    /// Metrics over the pooled counts of each dataset's samples.
    pub per_dataset: BTreeMap<Dataset, MetricSummary>,
    pub folds: Vec<FoldReport>,
    pub notes: Vec<String>,
    /// Resolved run configuration, filled in by the caller.
    #[serde(default)]
    pub config: serde_json::Value,
}

impl LosoReport {
    pub fn write_confusion_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["scope", "true_class", "negative", "positive", "surprise"])?;
        let mut emit = |scope: &str, m: &ConfusionMatrix| -> Result<()> {
            for c in Class::ALL {
                let row = m.0[c.index()];
                w.write_record([
                    scope.to_string(),
                    c.name().to_string(),
                    row[0].to_string(),
                    row[1].to_string(),
                    row[2].to_string(),
                ])?;
            }
            Ok(())
        };
        emit("pooled", &self.pooled.confusion)?;
        for (d, s) in &self.per_dataset {
            emit(d.tag(), &s.confusion)?;
        }
        for f in &self.folds {
            emit(&format!("fold:{}", f.subject), &f.confusion)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn run_fold<L: Learner>(learner: &L, samples: &[Sample], index: usize, fold: &Fold, seed: u64) -> Result<FoldReport> {
    let train: Vec<&Sample> = fold.train.iter().map(|&i| &samples[i]).collect();
    let test: Vec<&Sample> = fold.test.iter().map(|&i| &samples[i]).collect();
    log::info!("fold {index} ({}): {} train, {} test", fold.subject, train.len(), test.len());
    let (model, curve) = learner.fit(&train, seed)?;
    let logits = learner.predict(&model, &test)?;
    if logits.len() != test.len() {
        return Err(Error::Contract(format!(
            "learner returned {} predictions for {} samples",
            logits.len(),
            test.len()
        )));
    }
    let mut confusion = ConfusionMatrix::default();
    let predictions = test
        .iter()
        .zip(logits)
        .map(|(s, l)| {
            let predicted = Class::from_index(argmax(&l))
                .ok_or_else(|| Error::Contract(format!("learner returned {} logits", l.len())))?;
            confusion.add(s.class.index(), predicted.index());
            Ok(SamplePrediction {
                sample_id: s.id.clone(),
                dataset: s.dataset,
                truth: s.class,
                predicted,
                logits: l,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FoldReport {
        fold: index,
        subject: fold.subject.clone(),
        train_size: train.len(),
        final_train_loss: curve.last().copied(),
        predictions,
        confusion,
    })
}

/// Runs every fold from a fresh model, then scores the pooled predictions.
/// Fold `i` trains with seed `seed + i`, so results do not depend on `jobs`.
pub fn evaluate_loso<L: Learner>(samples: &[Sample], learner: &L, seed: u64, jobs: usize) -> Result<LosoReport> {
    let keys: Vec<String> = samples.iter().map(|s| format!("{}/{}", s.dataset, s.subject)).collect();
    let folds = folds_by_subject(&keys)?;
    let run = |(i, f): (usize, &Fold)| {
        run_fold(learner, samples, i, f, seed.wrapping_add(i as u64)).map_err(|e| Error::Fold {
            fold: i,
            subject: f.subject.clone(),
            source: Box::new(e),
        })
    };
    let results: Vec<Result<FoldReport>> = if jobs <= 1 {
        folds.iter().enumerate().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {jobs} worker threads: {e}")))?;
        pool.install(|| folds.par_iter().enumerate().map(run).collect())
    };
    let folds: Vec<FoldReport> = results.into_iter().collect::<Result<_>>()?;

    let mut pooled = ConfusionMatrix::default();
    let mut per_dataset: BTreeMap<Dataset, ConfusionMatrix> = BTreeMap::new();
    for f in &folds {
        pooled.merge(&f.confusion);
        for p in &f.predictions {
            per_dataset.entry(p.dataset).or_default().add(p.truth.index(), p.predicted.index());
        }
    }
    let per_dataset = per_dataset
        .into_iter()
        .map(|(d, m)| Ok((d, MetricSummary::from_confusion(m)?)))
        .collect::<Result<_>>()?;
    let pooled = MetricSummary::from_confusion(pooled)?;
    let mut notes = vec![
        "pooled metrics sum TP/FP/FN over all folds before computing UF1/UAR".to_string(),
        "per-dataset metrics pool the counts of that dataset's samples across folds".to_string(),
    ];
    if !pooled.empty_classes.is_empty() {
        notes.push(format!(
            "classes {:?} have undefined F1 or recall and were scored as 0",
            pooled.empty_classes
        ));
    }
    debug_assert_eq!(pooled.confusion.total() as usize, samples.len());
    Ok(LosoReport {
        pooled,
        per_dataset,
        folds,
        notes,
        config: serde_json::Value::Null,
    })
}
