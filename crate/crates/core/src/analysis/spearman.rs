use std::fmt;

/// Why a correlation could not be computed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Absence {
    TooFewValues { n: usize },
    ConstantColumn,
}

impl fmt::Display for Absence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Absence::TooFewValues { n } => write!(f, "only {n} paired values (need 3)"),
            Absence::ConstantColumn => f.write_str("constant column"),
        }
    }
}

/// Ascending ranks starting at 1; ties share the mean of the ranks they
/// span. NaN is not allowed; `±∞` rank at the ends.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1 ..= end
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation with average ranks for ties.
///
/// Entries where either side is `None` (or NaN) are dropped pairwise.
pub fn spearman(x: &[Option<f64>], y: &[Option<f64>]) -> Result<f64, Absence> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter_map(|(a, b)| match (a, b) {
            (Some(a), Some(b)) if !a.is_nan() && !b.is_nan() => Some((*a, *b)),
            _ => None,
        })
        .unzip();
    if xs.len() < 3 {
        return Err(Absence::TooFewValues { n: xs.len() });
    }
    pearson(&average_ranks(&xs), &average_ranks(&ys)).ok_or(Absence::ConstantColumn)
}

/// Convenience wrapper for fully present data.
pub fn spearman_dense(x: &[f64], y: &[f64]) -> Result<f64, Absence> {
    let wrap = |v: &[f64]| v.iter().copied().map(Some).collect::<Vec<_>>();
    spearman(&wrap(x), &wrap(y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotone_and_reversed() {
        assert_eq!(spearman_dense(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]), Ok(1.0));
        assert_eq!(spearman_dense(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Ok(-1.0));
    }

    #[test]
    fn three_one_two() {
        // tie-free: 1 - 6*6/(3*8) = -0.5
        assert_eq!(spearman_dense(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]), Ok(-0.5));
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
        assert_eq!(average_ranks(&[f64::INFINITY, 1.0, f64::INFINITY]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn absences() {
        assert_eq!(spearman_dense(&[1.0, 2.0], &[1.0, 2.0]), Err(Absence::TooFewValues { n: 2 }));
        assert_eq!(spearman_dense(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Absence::ConstantColumn));
        let x = [Some(1.0), None, Some(3.0), Some(4.0)];
        let y = [Some(1.0), Some(9.0), None, Some(2.0)];
        assert_eq!(spearman(&x, &y), Err(Absence::TooFewValues { n: 2 }));
    }
}
