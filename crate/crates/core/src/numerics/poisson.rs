use super::NumericsError;

/// Truncated, normalised Poisson(`lambda_t`) weights on `[left, right]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonWindow {
    pub left: usize,
    pub right: usize,
    /// `weights[k - left]`, normalised so they sum to one.
    pub weights: Vec<f64>,
    /// Sum of the unnormalised weights (mode weight scaled to 1).
    pub total_weight: f64,
}

impl PoissonWindow {
    pub fn weight(&self, k: usize) -> f64 {
        if k < self.left || k > self.right {
            0.0
        } else {
            self.weights[k - self.left]
        }
    }
}

/// Geometric bound on the tail beyond a weight `w` whose successors shrink
/// by at most `ratio` per step.
fn tail_bound(w: f64, ratio: f64) -> f64 {
    if ratio >= 1.0 {
        f64::INFINITY
    } else {
        w * ratio / (1.0 - ratio)
    }
}

/// Poisson weights for `lambda_t` with omitted tail mass below `tol`.
///
/// Weights are generated outward from the mode by the ratio recurrence with
/// the mode weight fixed at 1, so nothing over- or underflows for large
/// `lambda_t`. Each tail is cut once a geometric bound on what remains drops
/// below `tol / 2000` of the mass collected so far.
pub fn poisson_window(lambda_t: f64, tol: f64) -> Result<PoissonWindow, NumericsError> {
    if lambda_t.is_nan() || lambda_t < 0.0 || lambda_t.is_infinite() {
        return Err(NumericsError::NegativeLambda(lambda_t));
    }
    if !(tol > 0.0 && tol <= 1e-3) {
        return Err(NumericsError::Tolerance(tol));
    }
    if lambda_t == 0.0 {
        return Ok(PoissonWindow {
            left: 0,
            right: 0,
            weights: vec![1.0],
            total_weight: 1.0,
        });
    }

    let side_tol = tol / 2000.0;
    let mode = lambda_t.floor() as usize;

    let mut right_part = vec![1.0f64];
    let mut collected = 1.0f64;
    let mut k = mode;
    loop {
        let w = *right_part.last().unwrap();
        let ratio = lambda_t / (k as f64 + 1.0);
        if tail_bound(w, ratio) < side_tol * collected {
            break;
        }
        let next = w * ratio;
        right_part.push(next);
        collected += next;
        k += 1;
    }
    let right = k;

    let mut left_part: Vec<f64> = Vec::new();
    let mut k = mode;
    let mut w = 1.0f64;
    while k > 0 {
        let ratio = k as f64 / lambda_t;
        if tail_bound(w, ratio) < side_tol * collected {
            break;
        }
        w *= ratio;
        k -= 1;
        left_part.push(w);
        collected += w;
    }
    let left = k;

    let mut weights: Vec<f64> = left_part.into_iter().rev().collect();
    weights.extend(right_part);
    let total = kahan_sum(&weights);
    for w in &mut weights {
        *w /= total;
    }
    Ok(PoissonWindow {
        left,
        right,
        weights,
        total_weight: total,
    })
}

pub(crate) fn kahan_sum(values: &[f64]) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for &v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}
