//! Accuracy and worst-group accuracy.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroupKey};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::Label;

pub fn predictions(model: &Model, data: &Dataset) -> Result<Vec<Label>> {
    (0..data.len()).map(|i| model.predict(data.x(i))).collect()
}

pub fn accuracy(model: &Model, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let preds = predictions(model, data)?;
    Ok(accuracy_of(&preds, data.labels()))
}

fn accuracy_of(preds: &[Label], labels: &[Label]) -> f64 {
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub group: usize,
    pub key: GroupKey,
    pub accuracy: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub groups: Vec<GroupAccuracy>,
    pub overall: f64,
    pub worst_group_accuracy: f64,
    pub worst_group: usize,
}

impl GroupReport {
    /// Every group in the table must have at least one sample.
    pub fn from_predictions(preds: &[Label], data: &Dataset) -> Result<Self> {
        let ids = data.groups().ok_or(Error::MissingGroups)?;
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let table = data.group_table();
        let mut hits = vec![0usize; table.len()];
        let mut counts = vec![0usize; table.len()];
        for ((p, y), &g) in preds.iter().zip(data.labels()).zip(ids) {
            counts[g] += 1;
            if p == y {
                hits[g] += 1;
            }
        }
        let mut groups = Vec::with_capacity(table.len());
        for (g, key) in table.iter().enumerate() {
            if counts[g] == 0 {
                return Err(Error::EmptyGroup { group: g, attribute: key.attribute, label: key.label });
            }
            groups.push(GroupAccuracy { group: g, key: *key, accuracy: hits[g] as f64 / counts[g] as f64, count: counts[g] });
        }
        // First minimum wins on ties.
        let worst = groups.iter().fold(&groups[0], |w, g| if g.accuracy < w.accuracy { g } else { w });
        Ok(Self {
            overall: accuracy_of(preds, data.labels()),
            worst_group_accuracy: worst.accuracy,
            worst_group: worst.group,
            groups,
        })
    }
}

pub fn group_report(model: &Model, data: &Dataset) -> Result<GroupReport> {
    let preds = predictions(model, data)?;
    GroupReport::from_predictions(&preds, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelSpace;
    use crate::model::LossKind;
    use crate::numerics::Matrix;

    fn sign_model() -> Model {
        Model::linear(vec![1.0], 0.0, LossKind::Logistic).unwrap()
    }

    fn grouped(xs: &[f64], ys: &[Label], gs: &[usize]) -> Dataset {
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let table = vec![
            GroupKey { attribute: -1, label: -1 },
            GroupKey { attribute: -1, label: 1 },
            GroupKey { attribute: 1, label: -1 },
            GroupKey { attribute: 1, label: 1 },
        ];
        Dataset::new(Matrix::from_rows(&rows).unwrap(), ys.to_vec(), LabelSpace::Binary)
            .unwrap()
            .with_groups(gs.to_vec(), table)
            .unwrap()
    }

    #[test]
    fn accuracy_examples() {
        let m = sign_model();
        let data = grouped(&[1.0, -1.0, 2.0, -2.0], &[1, -1, 1, -1], &[3, 0, 3, 0]);
        assert_eq!(accuracy(&m, &data).unwrap(), 1.0);
        let constant = Model::linear(vec![0.0], 1.0, LossKind::Logistic).unwrap();
        assert_eq!(accuracy(&constant, &data).unwrap(), 0.5);
        let empty = data.subset(&[]);
        assert!(matches!(accuracy(&m, &empty), Err(Error::EmptyDataset)));
    }

    #[test]
    fn accuracy_matches_loop() {
        let m = Model::linear(vec![0.7], -0.1, LossKind::Logistic).unwrap();
        let xs: Vec<f64> = (0..101).map(|i| (i as f64 - 50.0) / 17.0).collect();
        let ys: Vec<Label> = (0..101).map(|i| if i % 3 == 0 { 1 } else { -1 }).collect();
        let gs = vec![0; 101];
        let data = grouped(&xs, &ys, &gs);
        let mut hits = 0;
        for i in 0..101 {
            if m.predict(&[xs[i]]).unwrap() == ys[i] {
                hits += 1;
            }
        }
        assert_eq!(accuracy(&m, &data).unwrap(), hits as f64 / 101.0);
    }

    #[test]
    fn report_examples() {
        // group accuracies 0.9, 0.5, 0.7, 0.8 from explicit predictions
        let mut preds = Vec::new();
        let mut labels = Vec::new();
        let mut gs = Vec::new();
        for (g, correct) in [9usize, 5, 7, 8].iter().enumerate() {
            for k in 0..10 {
                labels.push(1);
                preds.push(if k < *correct { 1 } else { -1 });
                gs.push(g);
            }
        }
        let data = grouped(&vec![0.0; 40], &labels, &gs);
        let r = GroupReport::from_predictions(&preds, &data).unwrap();
        assert_eq!(r.worst_group_accuracy, 0.5);
        assert_eq!(r.worst_group, 1);
        assert!(r.worst_group_accuracy <= r.overall);

        let without = data.without_group(1).unwrap();
        let keep: Vec<usize> = (0..40).filter(|i| gs[*i] != 1).collect();
        let sub_preds: Vec<Label> = keep.iter().map(|&i| preds[i]).collect();
        let r2 = GroupReport::from_predictions(&sub_preds, &without).unwrap();
        assert_eq!(r2.groups.len(), 3);
        assert_eq!(r2.worst_group_accuracy, 0.7);
    }

    #[test]
    fn single_group_and_zero_wga() {
        let m = sign_model();
        let one = Dataset::new(Matrix::from_rows(&[vec![1.0], vec![-1.0], vec![1.0]]).unwrap(), vec![1, 1, 1], LabelSpace::Binary)
            .unwrap()
            .with_groups(vec![0, 0, 0], vec![GroupKey { attribute: 1, label: 1 }])
            .unwrap();
        let r = group_report(&m, &one).unwrap();
        assert_eq!(r.worst_group_accuracy, r.overall);

        // every minority sample (a = −y) misclassified
        let data = grouped(&[1.0, -1.0, -1.0, 1.0], &[1, -1, 1, -1], &[3, 0, 1, 2]);
        let r = group_report(&m, &data).unwrap();
        assert_eq!(r.worst_group_accuracy, 0.0);
    }

    #[test]
    fn empty_group_and_missing_groups() {
        let m = sign_model();
        let data = grouped(&[1.0, -1.0], &[1, -1], &[3, 0]);
        assert!(matches!(group_report(&m, &data), Err(Error::EmptyGroup { group: 1, .. })));
        let plain = Dataset::new(Matrix::from_rows(&[vec![1.0]]).unwrap(), vec![1], LabelSpace::Binary).unwrap();
        assert!(matches!(group_report(&m, &plain), Err(Error::MissingGroups)));
    }

    #[test]
    fn permutation_invariant() {
        let m = sign_model();
        let data = grouped(&[1.0, -1.0, -0.5, 0.3, 2.0, -3.0], &[1, -1, 1, -1, 1, 1], &[3, 0, 1, 2, 3, 1]);
        let a = group_report(&m, &data).unwrap();
        let b = group_report(&m, &data.subset(&[5, 3, 1, 0, 2, 4])).unwrap();
        assert_eq!(a, b);
    }
}
