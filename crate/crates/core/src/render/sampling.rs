use rand::Rng;

use super::Ray;

/// `n` depths, one per equal stratum of `[t_near, t_far]`: the stratum
/// midpoint, or a uniform draw inside it when `stratified`.
pub fn sample_coarse<R: Rng + ?Sized>(ray: &Ray, n: usize, stratified: bool, rng: &mut R) -> Vec<f64> {
    let n = n.max(1);
    let width = (ray.t_far - ray.t_near) / n as f64;
    (0..n)
        .map(|i| {
            let offset = if stratified { rng.random::<f64>() } else { 0.5 };
            ray.t_near + (i as f64 + offset) * width
        })
        .collect()
}

/// Bin edges around sample depths: `t_near`, midpoints, `t_far`.
fn bin_edges(ray: &Ray, depths: &[f64]) -> Vec<f64> {
    let mut edges = Vec::with_capacity(depths.len() + 1);
    edges.push(ray.t_near);
    for w in depths.windows(2) {
        edges.push(0.5 * (w[0] + w[1]));
    }
    edges.push(ray.t_far);
    edges
}

/// Inverse-CDF draws from the piecewise-constant density proportional to
/// `coarse_weights` over the bins around `coarse_depths`, merged with the
/// coarse depths and sorted. Quantiles are `(k + 0.5)/n`, or jittered per
/// stratum when `stratified`.
pub fn sample_fine<R: Rng + ?Sized>(
    ray: &Ray,
    coarse_depths: &[f64],
    coarse_weights: &[f64],
    n: usize,
    stratified: bool,
    rng: &mut R,
) -> Vec<f64> {
    debug_assert_eq!(coarse_depths.len(), coarse_weights.len());
    let edges = bin_edges(ray, coarse_depths);
    let total: f64 = coarse_weights.iter().map(|w| w.max(0.0)).sum();
    let uniform = coarse_weights.iter().all(|w| *w < 1e-12);
    let pdf: Vec<f64> = if uniform {
        let widths: Vec<f64> = edges.windows(2).map(|e| e[1] - e[0]).collect();
        let sum: f64 = widths.iter().sum();
        widths.into_iter().map(|w| w / sum).collect()
    } else {
        coarse_weights.iter().map(|w| w.max(0.0) / total).collect()
    };
    let mut cdf = Vec::with_capacity(pdf.len() + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for p in &pdf {
        acc += p;
        cdf.push(acc);
    }
    let last = cdf.len() - 1;
    cdf[last] = 1.0;

    let mut out = coarse_depths.to_vec();
    out.reserve(n);
    for k in 0..n {
        let jitter = if stratified { rng.random::<f64>() } else { 0.5 };
        let u = (k as f64 + jitter) / n as f64;
        // first bin whose upper CDF exceeds u, skipping empty bins
        let mut bin = cdf.partition_point(|c| *c <= u).saturating_sub(1);
        bin = bin.min(pdf.len() - 1);
        while pdf[bin] <= 0.0 && bin + 1 < pdf.len() {
            bin += 1;
        }
        let frac = if pdf[bin] > 0.0 {
            ((u - cdf[bin]) / pdf[bin]).clamp(0.0, 1.0)
        } else {
            0.5
        };
        out.push(edges[bin] + frac * (edges[bin + 1] - edges[bin]));
    }
    out.sort_by(f64::total_cmp);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_ray() -> Ray {
        Ray {
            origin: Vector3::zeros(),
            direction: Vector3::z(),
            t_near: 0.0,
            t_far: 1.0,
        }
    }

    #[test]
    fn coarse_midpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = sample_coarse(&unit_ray(), 4, false, &mut rng);
        assert_eq!(d, vec![0.125, 0.375, 0.625, 0.875]);
    }

    #[test]
    fn stratified_samples_stay_in_strata() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let d = sample_coarse(&unit_ray(), 8, true, &mut rng);
            for (i, z) in d.iter().enumerate() {
                assert!(*z >= i as f64 / 8.0 && *z < (i + 1) as f64 / 8.0);
            }
        }
    }

    #[test]
    fn fine_samples_follow_single_bin() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let coarse = sample_coarse(&unit_ray(), 4, false, &mut rng);
        let fine = sample_fine(&unit_ray(), &coarse, &[0.0, 0.0, 1.0, 0.0], 64, true, &mut rng);
        assert_eq!(fine.len(), 68);
        let extra: Vec<f64> = fine.iter().filter(|z| !coarse.contains(z)).copied().collect();
        assert_eq!(extra.len(), 64);
        assert!(extra.iter().all(|z| (0.5..=0.75).contains(z)));
        assert!(fine.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn fine_samples_skip_zero_bins() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let coarse = sample_coarse(&unit_ray(), 4, false, &mut rng);
        let fine = sample_fine(&unit_ray(), &coarse, &[0.0, 1.0, 1.0, 0.0], 1000, true, &mut rng);
        for z in fine.iter().filter(|z| !coarse.contains(z)) {
            assert!((0.25..=0.75).contains(z), "{z}");
        }
    }

    #[test]
    fn zero_weights_fall_back_to_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let coarse = sample_coarse(&unit_ray(), 4, false, &mut rng);
        let fine = sample_fine(&unit_ray(), &coarse, &[0.0; 4], 3, false, &mut rng);
        let extra: Vec<f64> = fine.iter().filter(|z| !coarse.contains(z)).copied().collect();
        assert_eq!(extra.len(), 3);
        for (k, z) in extra.iter().enumerate() {
            assert!((z - (k as f64 + 0.5) / 3.0).abs() < 1e-12);
        }
    }
}
