use super::TrainError;

/// `C x C` counts indexed by (true class, predicted class).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    /// Builds from rows of true-class counts; every row must have `rows.len()` entries.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self, TrainError> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(TrainError::ShapeMismatch);
        }
        Ok(Self {
            num_classes: c,
            counts: rows.concat(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.num_classes + predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.num_classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), TrainError> {
        if other.num_classes != self.num_classes {
            return Err(TrainError::ShapeMismatch);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn accuracy(&self) -> f64 {
        let correct: u64 = (0..self.num_classes).map(|k| self.get(k, k)).sum();
        correct as f64 / self.total() as f64
    }
}

/// Multiclass Matthews correlation (the R_K statistic). Equals the binary
/// coefficient for two classes and is 0 when either marginal is degenerate.
pub fn mcc(cm: &ConfusionMatrix) -> Result<f64, TrainError> {
    let c = cm.num_classes;
    let s = cm.total() as i128;
    if s == 0 {
        return Err(TrainError::EmptyMatrix);
    }
    let mut correct = 0i128;
    let mut tp_sum = 0i128; // sum_k t_k p_k
    let mut tt = 0i128;
    let mut pp = 0i128;
    for k in 0..c {
        let t: i128 = (0..c).map(|j| cm.get(k, j) as i128).sum();
        let p: i128 = (0..c).map(|i| cm.get(i, k) as i128).sum();
        correct += cm.get(k, k) as i128;
        tp_sum += t * p;
        tt += t * t;
        pp += p * p;
    }
    let num = correct * s - tp_sum;
    let den_p = s * s - pp;
    let den_t = s * s - tt;
    if den_p == 0 || den_t == 0 {
        return Ok(0.0);
    }
    // one rounding of the exact product keeps perfect and inverted at exactly +-1
    let den = match den_p.checked_mul(den_t) {
        Some(d) => (d as f64).sqrt(),
        None => (den_p as f64).sqrt() * (den_t as f64).sqrt(),
    };
    Ok(num as f64 / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cm(rows: &[&[u64]]) -> ConfusionMatrix {
        ConfusionMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn reference_cases() {
        assert_eq!(
            mcc(&cm(&[&[5, 0, 0], &[0, 3, 0], &[0, 0, 9]])).unwrap(),
            1.0
        );
        assert_eq!(mcc(&cm(&[&[0, 7], &[4, 0]])).unwrap(), -1.0);
        assert_eq!(mcc(&cm(&[&[7, 0], &[4, 0]])).unwrap(), 0.0);
        assert!(matches!(
            mcc(&ConfusionMatrix::new(2)),
            Err(TrainError::EmptyMatrix)
        ));
    }

    #[test]
    fn binary_example() {
        // (48*44 - 2*6) / sqrt(50 * 50 * 54 * 46)
        let expect = 2100.0 / (50.0 * (54.0f64 * 46.0).sqrt());
        assert!((mcc(&cm(&[&[48, 2], &[6, 44]])).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn record_and_merge() {
        let mut a = ConfusionMatrix::new(3);
        a.record(0, 0);
        a.record(2, 1);
        let mut b = ConfusionMatrix::new(3);
        b.record(2, 1);
        a.merge(&b).unwrap();
        assert_eq!(a.get(2, 1), 2);
        assert_eq!(a.total(), 3);
        assert!(a.merge(&ConfusionMatrix::new(2)).is_err());
    }
}
