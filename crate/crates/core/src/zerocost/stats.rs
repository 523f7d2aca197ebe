use super::ZeroCostError;

/// Kendall's tau-a. Tied pairs count as neither concordant nor discordant
/// and there is no tie correction in the denominator.
pub fn kendall_tau(xs: &[f64], ys: &[f64]) -> Result<f64, ZeroCostError> {
    if xs.len() != ys.len() {
        return Err(ZeroCostError::Contract(format!(
            "kendall_tau: {} scores vs {} targets",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len();
    if n < 2 {
        return Err(ZeroCostError::Contract("kendall_tau needs at least two points".into()));
    }
    let mut score = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let s = (xs[i] - xs[j]).signum_or_zero() * (ys[i] - ys[j]).signum_or_zero();
            score += s as i64;
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(score as f64 / pairs)
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    fn signum_or_zero(self) -> f64 {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

/// Mean best rank.
///
/// In each group the member with the highest proxy score is selected (first
/// wins on ties) and ranked by accuracy, 1 being best; tied accuracies share
/// the best rank. Returns `sum(rank - 1) / sum(len - 1)`.
pub fn mbr(groups: &[Vec<(f64, f64)>]) -> Result<f64, ZeroCostError> {
    if groups.is_empty() {
        return Err(ZeroCostError::Contract("mbr needs at least one group".into()));
    }
    let mut num = 0usize;
    let mut den = 0usize;
    for (i, g) in groups.iter().enumerate() {
        if g.len() < 2 {
            return Err(ZeroCostError::Contract(format!(
                "mbr group {i} has {} member(s); at least two are required",
                g.len()
            )));
        }
        let mut pick = 0;
        for (j, m) in g.iter().enumerate() {
            if m.0 > g[pick].0 {
                pick = j;
            }
        }
        let acc = g[pick].1;
        num += g.iter().filter(|m| m.1 > acc).count();
        den += g.len() - 1;
    }
    Ok(num as f64 / den as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kendall_fixtures() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau(&x, &x).unwrap(), 1.0);
        assert_eq!(kendall_tau(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!((kendall_tau(&x, &[1.0, 3.0, 2.0, 4.0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        // one tied pair out of six counts as zero
        assert!((kendall_tau(&x, &[1.0, 1.0, 2.0, 3.0]).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert!(kendall_tau(&x, &x[..3]).is_err());
        assert!(kendall_tau(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn mbr_fixtures() {
        let g: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, i as f64)).collect();
        assert_eq!(mbr(&[g.clone(), g.clone()]).unwrap(), 0.0);
        let worst: Vec<(f64, f64)> = g.iter().map(|&(_, a)| (-a, a)).collect();
        assert_eq!(mbr(&[worst]).unwrap(), 1.0);
        // proxy favours the member with the third-best accuracy
        let third = vec![(0.0, 0.9), (0.1, 0.8), (5.0, 0.7), (0.2, 0.6), (0.3, 0.5)];
        assert_eq!(mbr(&[third]).unwrap(), 0.5);
        assert!(mbr(&[vec![(1.0, 1.0)]]).is_err());
    }

    #[test]
    fn mbr_ties_take_best_rank() {
        let g = vec![(0.0, 0.9), (1.0, 0.7), (0.5, 0.7)];
        assert_eq!(mbr(&[g]).unwrap(), 0.5);
    }
}
