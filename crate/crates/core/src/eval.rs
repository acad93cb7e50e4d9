//! Open-vocabulary evaluation: decode, parse, map the answer onto the
//! taxonomy, then tally a confusion matrix with an extra "unmatched" column.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{PolicyParams, TokenPolicy};
use crate::task::Sample;
use crate::transcript::{accuracy_reward, format_reward, normalize_label, parse_transcript, AliasTable, Transcript};

/// `K x (K+1)` counts; rows are ground truth, the last column collects
/// malformed and off-taxonomy answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; num_classes + 1]; num_classes],
        }
    }

    /// Rows must each have `K+1` entries.
    pub fn from_rows(rows: Vec<Vec<u64>>) -> Result<Self> {
        let k = rows.len();
        if k == 0 || rows.iter().any(|r| r.len() != k + 1) {
            return Err(Error::Argument(format!("confusion matrix must be K x (K+1), got {k} rows")));
        }
        Ok(Self { counts: rows })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    /// Records one prediction; `None` lands in the unmatched column.
    pub fn record(&mut self, truth: usize, predicted: Option<usize>) {
        let k = self.num_classes();
        self.counts[truth][predicted.unwrap_or(k)] += 1;
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn correct(&self, class: usize) -> u64 {
        self.counts[class][class]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn unmatched(&self) -> u64 {
        let k = self.num_classes();
        self.counts.iter().map(|r| r[k]).sum()
    }

    /// Recall per class; `None` for classes without support.
    pub fn per_class_recall(&self) -> Vec<Option<f64>> {
        (0..self.num_classes())
            .map(|c| {
                let support = self.support(c);
                (support > 0).then(|| self.correct(c) as f64 / support as f64)
            })
            .collect()
    }
}

/// Unweighted average recall over classes with non-zero support.
pub fn uar(cm: &ConfusionMatrix) -> Result<f64> {
    let recalls: Vec<f64> = cm.per_class_recall().into_iter().flatten().collect();
    if recalls.is_empty() {
        return Err(Error::Argument("UAR undefined: no class has support".into()));
    }
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// Weighted average recall, i.e. overall accuracy.
pub fn war(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Argument("WAR undefined: empty confusion matrix".into()));
    }
    let correct: u64 = (0..cm.num_classes()).map(|c| cm.correct(c)).sum();
    Ok(correct as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub split: String,
    pub n: u64,
    pub uar: f64,
    pub war: f64,
    pub per_class_recall: Vec<Option<f64>>,
    pub unmatched_rate: f64,
    pub format_rate: f64,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    pub fn from_confusion(model: &str, split: &str, cm: ConfusionMatrix, format_rate: f64) -> Result<Self> {
        Ok(Self {
            model: model.to_string(),
            split: split.to_string(),
            n: cm.total(),
            uar: uar(&cm)?,
            war: war(&cm)?,
            per_class_recall: cm.per_class_recall(),
            unmatched_rate: cm.unmatched() as f64 / cm.total() as f64,
            format_rate,
            confusion: cm,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub transcript: String,
    pub parsed_answer: String,
    pub matched_label: Option<String>,
    pub gt_label: String,
    pub r_acc: u8,
    pub r_format: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Decode {
    #[default]
    Greedy,
    Sample,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub decode: Decode,
    pub max_len: usize,
    /// Only used with [`Decode::Sample`].
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            decode: Decode::Greedy,
            max_len: 24,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub records: Vec<SampleRecord>,
}

/// Builds the confusion matrix from per-sample records.
pub fn tally(records: &[SampleRecord], aliases: &AliasTable) -> Result<ConfusionMatrix> {
    let taxonomy = aliases.taxonomy();
    let mut cm = ConfusionMatrix::new(taxonomy.len());
    for r in records {
        let truth = taxonomy
            .by_name(&r.gt_label)
            .ok_or_else(|| Error::Data(format!("record {}: unknown label `{}`", r.id, r.gt_label)))?;
        let predicted = r.matched_label.as_deref().and_then(|name| taxonomy.by_name(name)).map(|l| l.id);
        cm.record(truth.id, predicted);
    }
    Ok(cm)
}

/// Decodes one transcript per sample and scores it under the
/// open-vocabulary protocol.
pub fn evaluate_policy(
    policy: &TokenPolicy,
    params: &PolicyParams,
    samples: &[Sample],
    aliases: &AliasTable,
    options: EvalOptions,
    model: &str,
) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Argument("evaluation split is empty".into()));
    }
    let records = samples
        .par_iter()
        .enumerate()
        .map(|(i, sample)| {
            let response = match options.decode {
                Decode::Greedy => policy.greedy_response(params, sample, options.max_len)?,
                Decode::Sample => {
                    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
                    rng.set_stream(i as u64);
                    policy.sample_response(params, sample, options.max_len, None, &mut rng)?
                }
            };
            let transcript = Transcript::Tokens(response.tokens);
            let parsed = parse_transcript(&transcript, policy.vocab());
            let matched = if parsed.well_formed {
                normalize_label(&parsed.answer_content, aliases).map(|l| l.name.clone())
            } else {
                None
            };
            let Transcript::Tokens(tokens) = &transcript else { unreachable!() };
            Ok(SampleRecord {
                id: sample.id.clone(),
                transcript: policy.vocab().render(tokens),
                parsed_answer: parsed.answer_content.clone(),
                matched_label: matched,
                gt_label: sample.label.name.clone(),
                r_acc: accuracy_reward(&parsed, &sample.label, aliases),
                r_format: format_reward(&parsed),
            })
        })
        .collect::<Result<Vec<SampleRecord>>>()?;
    let cm = tally(&records, aliases)?;
    let format_rate = records.iter().map(|r| f64::from(r.r_format)).sum::<f64>() / records.len() as f64;
    let split = samples[0].split.as_str();
    Ok(Evaluation {
        report: MetricsReport::from_confusion(model, split, cm, format_rate)?,
        records,
    })
}

/// Models x splits table of WAR and UAR.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub splits: Vec<String>,
    /// `(model, [(war, uar) per split])`.
    pub rows: Vec<(String, Vec<(f64, f64)>)>,
}

/// Groups reports by model (first-appearance order). Every model must cover
/// the same splits.
pub fn compare_models(reports: &[MetricsReport]) -> Result<ComparisonTable> {
    if reports.is_empty() {
        return Err(Error::Argument("no reports to compare".into()));
    }
    let mut splits: Vec<String> = Vec::new();
    let mut models: Vec<String> = Vec::new();
    for r in reports {
        if !splits.contains(&r.split) {
            splits.push(r.split.clone());
        }
        if !models.contains(&r.model) {
            models.push(r.model.clone());
        }
    }
    let mut rows = Vec::with_capacity(models.len());
    for model in models {
        let mut cells = Vec::with_capacity(splits.len());
        for split in &splits {
            let matching: Vec<&MetricsReport> =
                reports.iter().filter(|r| r.model == model && &r.split == split).collect();
            match matching.as_slice() {
                [r] => cells.push((r.war, r.uar)),
                [] => {
                    return Err(Error::Argument(format!("model `{model}` has no report for split `{split}`")));
                }
                _ => {
                    return Err(Error::Argument(format!("model `{model}` has several reports for split `{split}`")));
                }
            }
        }
        rows.push((model, cells));
    }
    Ok(ComparisonTable { splits, rows })
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model");
        for split in &self.splits {
            out.push_str(&format!(",{split}_war,{split}_uar"));
        }
        out.push('\n');
        for (model, cells) in &self.rows {
            out.push_str(model);
            for (w, u) in cells {
                out.push_str(&format!(",{w:.6},{u:.6}"));
            }
            out.push('\n');
        }
        out
    }

    /// Aligned text with percentages.
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|(m, _)| m.len()).max().unwrap_or(5).max(5);
        let cell = self.splits.iter().map(|s| s.len().max(15)).collect::<Vec<_>>();
        let mut out = format!("{:<width$}", "model");
        for (split, w) in self.splits.iter().zip(&cell) {
            out.push_str(&format!("  {split:^w$}"));
        }
        out.push('\n');
        out.push_str(&" ".repeat(width));
        for w in &cell {
            out.push_str(&format!("  {:^w$}", format!("{:>7}{:>8}", "WAR", "UAR")));
        }
        out.push('\n');
        for (model, cells) in &self.rows {
            out.push_str(&format!("{model:<width$}"));
            for ((war, uar), w) in cells.iter().zip(&cell) {
                out.push_str(&format!("  {:^w$}", format!("{:>7.2}{:>8.2}", 100.0 * war, 100.0 * uar)));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_computed_metrics() {
        let cm = ConfusionMatrix::from_rows(vec![vec![2, 0, 0], vec![1, 1, 0]]).unwrap();
        assert_eq!(uar(&cm).unwrap(), 0.75);
        assert_eq!(war(&cm).unwrap(), 0.75);

        let diag = ConfusionMatrix::from_rows(vec![vec![3, 0, 0], vec![0, 5, 0]]).unwrap();
        assert_eq!(uar(&diag).unwrap(), 1.0);

        // class 0 without support is excluded
        let cm = ConfusionMatrix::from_rows(vec![vec![0, 0, 0], vec![1, 3, 1]]).unwrap();
        assert!((uar(&cm).unwrap() - 0.6).abs() < 1e-15);

        let unmatched = ConfusionMatrix::from_rows(vec![vec![0, 0, 4], vec![0, 0, 2]]).unwrap();
        assert_eq!(war(&unmatched).unwrap(), 0.0);

        let single = ConfusionMatrix::from_rows(vec![vec![7, 0, 0], vec![0, 0, 0]]).unwrap();
        assert_eq!(war(&single).unwrap(), 1.0);

        let empty = ConfusionMatrix::new(3);
        assert!(uar(&empty).is_err());
        assert!(war(&empty).is_err());
    }

    #[test]
    fn duplicating_a_class_moves_war_not_uar() {
        let base = ConfusionMatrix::from_rows(vec![vec![4, 0, 0], vec![2, 2, 0]]).unwrap();
        let doubled = ConfusionMatrix::from_rows(vec![vec![8, 0, 0], vec![2, 2, 0]]).unwrap();
        assert_eq!(uar(&base).unwrap(), uar(&doubled).unwrap());
        assert!(war(&doubled).unwrap() > war(&base).unwrap());
    }

    fn report(model: &str, split: &str, war: f64) -> MetricsReport {
        let cm = ConfusionMatrix::from_rows(vec![vec![1, 0, 0], vec![0, 1, 0]]).unwrap();
        MetricsReport { war, ..MetricsReport::from_confusion(model, split, cm, 1.0).unwrap() }
    }

    #[test]
    fn comparison_shape() {
        let mut reports = vec![];
        for m in ["base", "emer_sft", "direct_sft", "rlvr"] {
            for s in ["id_test", "ood_test"] {
                reports.push(report(m, s, 0.5));
            }
        }
        let table = compare_models(&reports).unwrap();
        assert_eq!(table.rows.len(), 4);
        assert_eq!(table.splits, vec!["id_test", "ood_test"]);
        let csv = table.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "model,id_test_war,id_test_uar,ood_test_war,ood_test_uar");
        assert_eq!(lines.len(), 5);
        assert!(lines[4].starts_with("rlvr,"));
        assert_eq!(lines[1].split(',').count(), 5);
        assert_eq!(table.to_text().lines().count(), 6);

        let one = compare_models(&reports[..2]).unwrap();
        assert_eq!(one.rows.len(), 1);

        assert!(compare_models(&[]).is_err());
        reports.pop();
        assert!(compare_models(&reports).is_err());
    }

    proptest! {
        #[test]
        fn war_is_support_weighted_recall(rows in proptest::collection::vec(proptest::collection::vec(0u64..20, 5), 4)) {
            let cm = ConfusionMatrix::from_rows(rows).unwrap();
            prop_assume!(cm.total() > 0);
            let total = cm.total() as f64;
            let weighted: f64 = cm
                .per_class_recall()
                .iter()
                .enumerate()
                .filter_map(|(c, r)| r.map(|r| r * cm.support(c) as f64 / total))
                .sum();
            prop_assert!((weighted - war(&cm).unwrap()).abs() < 1e-12);
        }
    }
}
