use serde::{Deserialize, Serialize};

use super::classifier::CLASSES;
use crate::corpus::Lang;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `confusion[true][predicted]`.
    pub confusion: [[usize; CLASSES]; CLASSES],
}

impl RouterMetrics {
    /// Macro averages run over the classes that occur as a true label or a
    /// prediction. A class never predicted has precision 0.
    pub fn from_predictions(truth: &[Lang], predicted: &[Lang]) -> Result<Self> {
        if truth.is_empty() {
            return Err(Error::Empty("router evaluation set"));
        }
        if truth.len() != predicted.len() {
            return Err(Error::shape(
                "evaluate_router",
                format!("{} labels, {} predictions", truth.len(), predicted.len()),
            ));
        }
        let mut confusion = [[0usize; CLASSES]; CLASSES];
        for (t, p) in truth.iter().zip(predicted) {
            confusion[t.index()][p.index()] += 1;
        }
        let total = truth.len() as f64;
        let correct: usize = (0..CLASSES).map(|c| confusion[c][c]).sum();
        let (mut p_sum, mut r_sum, mut f_sum, mut n) = (0.0, 0.0, 0.0, 0);
        for c in 0..CLASSES {
            let support: usize = confusion[c].iter().sum();
            let predicted_c: usize = (0..CLASSES).map(|t| confusion[t][c]).sum();
            if support == 0 && predicted_c == 0 {
                continue;
            }
            let tp = confusion[c][c] as f64;
            let p = if predicted_c == 0 { 0.0 } else { tp / predicted_c as f64 };
            let r = if support == 0 { 0.0 } else { tp / support as f64 };
            let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            p_sum += p;
            r_sum += r;
            f_sum += f;
            n += 1;
        }
        let n = n as f64;
        Ok(RouterMetrics {
            accuracy: correct as f64 / total,
            precision: p_sum / n,
            recall: r_sum / n,
            f1: f_sum / n,
            confusion,
        })
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    pub fn support(&self, lang: Lang) -> usize {
        self.confusion[lang.index()].iter().sum()
    }

    /// `classifier,accuracy,precision,recall,f1` header plus one row.
    pub fn to_csv(&self, name: &str) -> String {
        format!(
            "classifier,accuracy,precision,recall,f1\n{name},{},{},{},{}\n",
            self.accuracy, self.precision, self.recall, self.f1
        )
    }

    /// Rows are true classes, columns predictions.
    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true\\pred");
        for l in Lang::ALL {
            s.push_str(&format!(",{l}"));
        }
        s.push('\n');
        for t in Lang::ALL {
            s.push_str(t.code());
            for p in Lang::ALL {
                s.push_str(&format!(",{}", self.confusion[t.index()][p.index()]));
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Lang::*;

    #[test]
    fn perfect_predictions() {
        let y = [En, Fr, De, Py, Py];
        let m = RouterMetrics::from_predictions(&y, &y).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(m.confusion[Py.index()][Py.index()], 2);
        assert_eq!(m.total(), 5);
    }

    #[test]
    fn six_samples_one_error() {
        // truth: en en fr fr de de; one de predicted as fr
        let t = [En, En, Fr, Fr, De, De];
        let p = [En, En, Fr, Fr, De, Fr];
        let m = RouterMetrics::from_predictions(&t, &p).unwrap();
        // hand computation over classes {en, fr, de}
        // precision: en 1, fr 2/3, de 1   recall: en 1, fr 1, de 1/2
        // f1: en 1, fr 0.8, de 2/3
        assert!((m.accuracy - 5.0 / 6.0).abs() < 1e-12);
        assert!((m.precision - (1.0 + 2.0 / 3.0 + 1.0) / 3.0).abs() < 1e-12);
        assert!((m.recall - (1.0 + 1.0 + 0.5) / 3.0).abs() < 1e-12);
        assert!((m.f1 - (1.0 + 0.8 + 2.0 / 3.0) / 3.0).abs() < 1e-12);
        assert_eq!(m.support(De), 2);
        assert_eq!(m.confusion[De.index()][Fr.index()], 1);
    }

    #[test]
    fn confusion_csv_layout() {
        let m = RouterMetrics::from_predictions(&[En, Py], &[En, En]).unwrap();
        assert_eq!(
            m.confusion_csv(),
            "true\\pred,en,fr,de,py\nen,1,0,0,0\nfr,0,0,0,0\nde,0,0,0,0\npy,1,0,0,0\n"
        );
        assert!(RouterMetrics::from_predictions(&[], &[]).is_err());
    }
}
