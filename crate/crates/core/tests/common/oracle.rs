//! Metrics computed the slow way, straight from per-example comparisons,
//! as an independent reference for `ctxsent::metrics`.

pub struct Reference {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub f1_macro: f64,
    pub f1_weighted: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn reference(golds: &[usize], preds: &[usize], k: usize) -> Reference {
    let n = golds.len();
    let pairs = || golds.iter().zip(preds);
    let correct = pairs().filter(|(g, p)| g == p).count();
    let mut precision = Vec::new();
    let mut recall = Vec::new();
    let mut f1 = Vec::new();
    let mut weighted = 0.0;
    for c in 0..k {
        let tp = pairs().filter(|&(&g, &p)| g == c && p == c).count();
        let predicted = pairs().filter(|&(_, &p)| p == c).count();
        let actual = pairs().filter(|&(&g, _)| g == c).count();
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        let f = if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        };
        weighted += f * actual as f64;
        precision.push(p);
        recall.push(r);
        f1.push(f);
    }
    Reference {
        accuracy: ratio(correct, n),
        f1_macro: f1.iter().sum::<f64>() / k as f64,
        f1_weighted: weighted / n as f64,
        precision,
        recall,
        f1,
    }
}
