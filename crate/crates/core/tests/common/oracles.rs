//! Brute-force reference implementations of the clustering metrics.

fn distinct(v: &[usize]) -> Vec<usize> {
    let mut d = v.to_vec();
    d.sort_unstable();
    d.dedup();
    d
}

fn count(v: &[usize], x: usize) -> usize {
    v.iter().filter(|&&e| e == x).count()
}

fn entropy(v: &[usize]) -> f64 {
    let n = v.len() as f64;
    -distinct(v)
        .into_iter()
        .map(|x| {
            let p = count(v, x) as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

pub fn nmi(y: &[usize], c: &[usize]) -> f64 {
    let (hy, hc) = (entropy(y), entropy(c));
    match (hy == 0.0, hc == 0.0) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let n = y.len() as f64;
    let mut mi = 0.0;
    for a in distinct(y) {
        for b in distinct(c) {
            let joint = y.iter().zip(c).filter(|&(&u, &v)| u == a && v == b).count() as f64 / n;
            if joint > 0.0 {
                let pa = count(y, a) as f64 / n;
                let pb = count(c, b) as f64 / n;
                mi += joint * (joint / (pa * pb)).ln();
            }
        }
    }
    mi / ((hy + hc) / 2.0)
}

pub fn homogeneity(y: &[usize], c: &[usize]) -> f64 {
    let hy = entropy(y);
    if hy == 0.0 {
        return 1.0;
    }
    let n = y.len() as f64;
    let mut conditional = 0.0;
    for k in distinct(c) {
        let nk = count(c, k) as f64;
        for class in distinct(y) {
            let nck = y.iter().zip(c).filter(|&(&u, &v)| u == class && v == k).count() as f64;
            if nck > 0.0 {
                conditional -= nck / n * (nck / nk).ln();
            }
        }
    }
    1.0 - conditional / hy
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean silhouette with the singleton convention s(i) = 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = points.len();
    let mut total = 0.0;
    for i in 0..n {
        let own = count(labels, labels[i]);
        if own == 1 {
            continue;
        }
        let mut a = 0.0;
        for j in 0..n {
            if j != i && labels[j] == labels[i] {
                a += euclid(&points[i], &points[j]);
            }
        }
        a /= (own - 1) as f64;
        let mut b = f64::INFINITY;
        for k in distinct(labels) {
            if k == labels[i] {
                continue;
            }
            let mut sum = 0.0;
            for j in 0..n {
                if labels[j] == k {
                    sum += euclid(&points[i], &points[j]);
                }
            }
            b = b.min(sum / count(labels, k) as f64);
        }
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n as f64
}
