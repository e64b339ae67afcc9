use super::{MetricsError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spearman {
    pub rho: f64,
    /// Set when one input has no variance; `rho` is then 0.
    pub degenerate: bool,
}

/// 1-based ranks with ties sharing their mean rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<Spearman> {
    if xs.len() != ys.len() {
        return Err(MetricsError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(MetricsError::TooShort(xs.len()));
    }
    Ok(match pearson(&average_ranks(xs), &average_ranks(ys)) {
        Some(rho) => Spearman { rho, degenerate: false },
        None => Spearman { rho: 0.0, degenerate: true },
    })
}
